//! JSON documents: scenes, edge sidecars, priors, hyperparameters.
//!
//! Floats are written with 17 significant digits, so every finite double
//! round-trips bitwise. Documents holding non-finite values are refused on write.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{Component1, Component2, Gmm1, Gmm2};
use crate::likelihood::{HyperParams, RobustClass, RobustForm, RobustPair, RobustParams};
use crate::priors::{AxisMixtures, CountPrior, PriorModel};
use crate::real::Real;
use crate::relative::{RelativeTensor, EDGE_DIM};
use crate::scene::{ClassTable, ObjectAttributes, SceneLayout, SceneSlot, NODE_DIM};

pub const FORMAT_VERSION: u32 = 1;

/// `serde_json` formatter that prints every float as `d.dddddddddddddddde±x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct FullPrecision {
    pretty: bool,
    depth: usize,
    has_value: bool,
}

impl FullPrecision {
    pub fn pretty() -> Self {
        Self {
            pretty: true,
            ..Self::default()
        }
    }

    fn indent<W: ?Sized + Write>(&self, w: &mut W) -> std::io::Result<()> {
        if self.pretty {
            w.write_all(b"\n")?;
            for _ in 0..self.depth {
                w.write_all(b"  ")?;
            }
        }
        Ok(())
    }
}

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        if !value.is_finite() {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("non-finite value {value}")));
        }
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.depth += 1;
        self.has_value = false;
        w.write_all(b"[")
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.depth -= 1;
        if self.has_value && self.pretty {
            self.indent(w)?;
        }
        self.has_value = true;
        w.write_all(b"]")
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        if !first {
            w.write_all(b",")?;
        }
        self.indent(w)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, _w: &mut W) -> std::io::Result<()> {
        self.has_value = true;
        Ok(())
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.depth += 1;
        self.has_value = false;
        w.write_all(b"{")
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.depth -= 1;
        if self.has_value && self.pretty {
            self.indent(w)?;
        }
        self.has_value = true;
        w.write_all(b"}")
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        if !first {
            w.write_all(b",")?;
        }
        self.indent(w)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        w.write_all(if self.pretty { b": " } else { b":" })
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, _w: &mut W) -> std::io::Result<()> {
        self.has_value = true;
        Ok(())
    }
}

/// Serializes any value with [`FullPrecision`].
pub fn to_json<S: Serialize>(value: &S) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision::pretty());
    value.serialize(&mut ser).map_err(|e| Error::Numerical(e.to_string()))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("JSON output is UTF-8"))
}

pub fn from_json<D: DeserializeOwned>(text: &str) -> Result<D> {
    Ok(serde_json::from_str(text)?)
}

/// Writes `text` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let res = std::fs::write(&tmp, text).and_then(|_| std::fs::rename(&tmp, path));
    if res.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(res?)
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn check_format(found: u32, what: &str) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Schema(format!("{what}: unsupported format {found}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub name: String,
    pub slots: usize,
}

pub fn class_entries(t: &ClassTable) -> Vec<ClassEntry> {
    (0..t.num_classes())
        .map(|c| ClassEntry {
            name: t.name(c).to_string(),
            slots: t.slots_of(c),
        })
        .collect()
}

pub fn class_table_from(entries: &[ClassEntry]) -> Result<ClassTable> {
    ClassTable::new(entries.iter().map(|e| (e.name.clone(), e.slots)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectEntry {
    class: String,
    slot: usize,
    size: [f64; 3],
    rotation: [f64; 3],
    translation: [f64; 3],
    shape_code: [f64; 3],
    indicator: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    classes: Vec<ClassEntry>,
    objects: Vec<ObjectEntry>,
}

pub fn save_scene<T: Real>(scene: &SceneLayout<T>) -> Result<String> {
    scene.validate()?;
    let s = scene.cast::<f64>();
    let t = &s.class_table;
    let objects = s
        .slots
        .iter()
        .map(|sl| ObjectEntry {
            class: t.name(sl.class).to_string(),
            slot: sl.slot_index,
            size: sl.attrs.size,
            rotation: sl.attrs.rotation,
            translation: sl.attrs.translation,
            shape_code: sl.attrs.shape_code,
            indicator: sl.indicator,
        })
        .collect();
    to_json(&SceneFile {
        classes: class_entries(t),
        objects,
    })
}

pub fn load_scene<T: Real>(text: &str) -> Result<SceneLayout<T>> {
    let f: SceneFile = from_json(text)?;
    let table = class_table_from(&f.classes)?;
    let order = table.canonical_slot_order();
    if f.objects.len() != order.len() {
        return Err(Error::Schema(format!(
            "class table declares {} slots but the file lists {} objects",
            order.len(),
            f.objects.len()
        )));
    }
    let mut scene = SceneLayout::<f64>::empty(table);
    for (i, (o, (name, idx))) in f.objects.into_iter().zip(order).enumerate() {
        if o.class != name || o.slot != idx {
            let known = scene.class_table.class_index(&o.class).is_ok();
            return Err(if known {
                Error::Schema(format!("object {i}: expected ({name}, {idx}), found ({}, {})", o.class, o.slot))
            } else {
                Error::UnknownClass(o.class)
            });
        }
        let slot = &mut scene.slots[i];
        *slot = SceneSlot {
            attrs: ObjectAttributes {
                size: o.size,
                rotation: o.rotation,
                translation: o.translation,
                shape_code: o.shape_code,
            },
            indicator: o.indicator,
            ..*slot
        };
    }
    scene.validate()?;
    Ok(scene.cast())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeFile {
    format: u32,
    shape: [usize; 3],
    data: Vec<f64>,
}

pub fn save_edges<T: Real>(edges: &RelativeTensor<T>) -> Result<String> {
    let e = edges.cast::<f64>();
    if e.flat().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("edge tensor contains non-finite values".into()));
    }
    to_json(&EdgeFile {
        format: FORMAT_VERSION,
        shape: e.shape(),
        data: e.flat(),
    })
}

pub fn load_edges<T: Real>(text: &str) -> Result<RelativeTensor<T>> {
    let f: EdgeFile = from_json(text)?;
    check_format(f.format, "edge file")?;
    let [n, m, d] = f.shape;
    if n != m || d != EDGE_DIM {
        return Err(Error::Schema(format!("edge tensor shape must be [n, n, {EDGE_DIM}], got {:?}", f.shape)));
    }
    if f.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Schema("edge tensor contains non-finite values".into()));
    }
    let t = RelativeTensor::<f64>::from_flat(n, &f.data)
        .ok_or_else(|| Error::Schema(format!("edge data has {} values, shape needs {}", f.data.len(), n * n * d)))?;
    Ok(t.cast())
}

pub fn load_scene_file<T: Real>(path: &Path) -> Result<SceneLayout<T>> {
    load_scene(&read_text(path)?).map_err(|e| annotate(e, path))
}

pub fn load_edges_file<T: Real>(path: &Path) -> Result<RelativeTensor<T>> {
    load_edges(&read_text(path)?).map_err(|e| annotate(e, path))
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        Error::Parse { line, column, message } => Error::Parse {
            line,
            column,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

type Comp1 = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Comp2 {
    weight: f64,
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
}

fn gmm1_out(g: &Gmm1<f64>) -> Vec<Comp1> {
    g.components.iter().map(|c| [c.weight, c.mean, c.var]).collect()
}

fn gmm1_in(v: &[Comp1]) -> Result<Gmm1<f64>> {
    Gmm1::new(v.iter().map(|&[weight, mean, var]| Component1 { weight, mean, var }).collect())
}

fn gmm2_out(g: &Gmm2<f64>) -> Vec<Comp2> {
    g.components
        .iter()
        .map(|c| Comp2 {
            weight: c.weight,
            mean: c.mean,
            cov: c.cov,
        })
        .collect()
}

fn gmm2_in(v: &[Comp2]) -> Result<Gmm2<f64>> {
    Gmm2::new(
        v.iter()
            .map(|c| Component2 {
                weight: c.weight,
                mean: c.mean,
                cov: c.cov,
            })
            .collect(),
    )
}

type AxesDoc = Option<[Vec<Comp1>; 3]>;

fn axes_out(m: &Option<AxisMixtures<f64>>) -> AxesDoc {
    m.as_ref().map(|a| [gmm1_out(&a[0]), gmm1_out(&a[1]), gmm1_out(&a[2])])
}

fn axes_in(d: &AxesDoc) -> Result<Option<AxisMixtures<f64>>> {
    d.as_ref()
        .map(|a| Ok([gmm1_in(&a[0])?, gmm1_in(&a[1])?, gmm1_in(&a[2])?]))
        .transpose()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountDoc {
    class_mixtures: Vec<Option<Vec<Comp1>>>,
    pair_mixtures: Vec<Option<Vec<Comp2>>>,
    class_tables: Vec<Vec<f64>>,
    pair_tables: Vec<Vec<f64>>,
}

/// JSON form of [`PriorModel`]. Mixture components are `[weight, mean, variance]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorDoc {
    format: u32,
    classes: Vec<ClassEntry>,
    /// Per class, per axis.
    translation: Vec<AxesDoc>,
    /// Per ordered class pair, per axis.
    relative: Vec<AxesDoc>,
    mask_enabled: Vec<bool>,
    counts: CountDoc,
}

impl PriorDoc {
    pub fn from_model<T: Real>(p: &PriorModel<T>) -> Self {
        let p = p.cast::<f64>();
        Self {
            format: FORMAT_VERSION,
            classes: class_entries(&p.class_table),
            translation: p.translation.iter().map(axes_out).collect(),
            relative: p.relative.iter().map(axes_out).collect(),
            mask_enabled: p.mask_enabled.clone(),
            counts: CountDoc {
                class_mixtures: p.counts.class_mixtures.iter().map(|m| m.as_ref().map(gmm1_out)).collect(),
                pair_mixtures: p.counts.pair_mixtures.iter().map(|m| m.as_ref().map(gmm2_out)).collect(),
                class_tables: p.counts.class_tables.clone(),
                pair_tables: p.counts.pair_tables.clone(),
            },
        }
    }

    pub fn to_model<T: Real>(&self) -> Result<PriorModel<T>> {
        check_format(self.format, "prior document")?;
        let p = PriorModel::<f64> {
            class_table: class_table_from(&self.classes)?,
            translation: self.translation.iter().map(axes_in).collect::<Result<_>>()?,
            relative: self.relative.iter().map(axes_in).collect::<Result<_>>()?,
            mask_enabled: self.mask_enabled.clone(),
            counts: CountPrior {
                class_mixtures: self
                    .counts
                    .class_mixtures
                    .iter()
                    .map(|m| m.as_deref().map(gmm1_in).transpose())
                    .collect::<Result<_>>()?,
                pair_mixtures: self
                    .counts
                    .pair_mixtures
                    .iter()
                    .map(|m| m.as_deref().map(gmm2_in).transpose())
                    .collect::<Result<_>>()?,
                class_tables: self.counts.class_tables.clone(),
                pair_tables: self.counts.pair_tables.clone(),
            },
        };
        p.validate()?;
        Ok(p.cast())
    }
}

pub fn save_priors<T: Real>(p: &PriorModel<T>) -> Result<String> {
    p.validate()?;
    to_json(&PriorDoc::from_model(p))
}

pub fn load_priors<T: Real>(text: &str) -> Result<PriorModel<T>> {
    from_json::<PriorDoc>(text)?.to_model()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobustDoc<const N: usize> {
    alpha: f64,
    #[serde(with = "fixed")]
    variances: [f64; N],
}

mod fixed {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(v: &[f64; N], s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[f64; N], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        let n = v.len();
        v.try_into()
            .map_err(|_| serde::de::Error::custom(format!("expected {N} variances, found {n}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FormDoc {
    Distance,
    Quadratic,
}

/// JSON form of [`HyperParams`], in natural (not log) space.
///
/// The prior is optional so that robust parameters and priors can live in
/// separate files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperDoc {
    format: u32,
    classes: Vec<ClassEntry>,
    form: FormDoc,
    edge_gating: bool,
    /// Per class: α and the 13 node-channel variances.
    nodes: Vec<RobustDoc<NODE_DIM>>,
    /// Per ordered class pair: α and the 15 edge-channel variances.
    edges: Vec<RobustDoc<EDGE_DIM>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prior: Option<PriorDoc>,
}

impl HyperDoc {
    pub fn from_hyper<T: Real>(h: &HyperParams<T>, embed_prior: bool) -> Self {
        let r = h.robust.cast::<f64>();
        Self {
            format: FORMAT_VERSION,
            classes: class_entries(&h.prior.class_table),
            form: match h.form {
                RobustForm::Distance => FormDoc::Distance,
                RobustForm::Quadratic => FormDoc::Quadratic,
            },
            edge_gating: h.edge_gating,
            nodes: r
                .classes
                .iter()
                .map(|c| RobustDoc {
                    alpha: c.alpha,
                    variances: c.variances,
                })
                .collect(),
            edges: r
                .pairs
                .iter()
                .map(|p| RobustDoc {
                    alpha: p.alpha,
                    variances: p.variances,
                })
                .collect(),
            prior: embed_prior.then(|| PriorDoc::from_model(&h.prior)),
        }
    }

    pub fn has_prior(&self) -> bool {
        self.prior.is_some()
    }

    /// Builds Φ, taking the prior from `prior` when given, else from the document.
    pub fn to_hyper<T: Real>(&self, prior: Option<PriorModel<T>>) -> Result<HyperParams<T>> {
        check_format(self.format, "hyperparameter document")?;
        let prior = match (prior, &self.prior) {
            (Some(p), _) => p,
            (None, Some(d)) => d.to_model()?,
            (None, None) => return Err(Error::Schema("hyperparameter document has no prior and none was supplied".into())),
        };
        if class_table_from(&self.classes)? != prior.class_table {
            return Err(Error::Schema("hyperparameters and prior use different class tables".into()));
        }
        let robust = RobustParams::<f64> {
            classes: self
                .nodes
                .iter()
                .map(|c| RobustClass {
                    alpha: c.alpha,
                    variances: c.variances,
                })
                .collect(),
            pairs: self
                .edges
                .iter()
                .map(|p| RobustPair {
                    alpha: p.alpha,
                    variances: p.variances,
                })
                .collect(),
        };
        let h = HyperParams {
            robust: robust.cast(),
            prior,
            edge_gating: self.edge_gating,
            form: match self.form {
                FormDoc::Distance => RobustForm::Distance,
                FormDoc::Quadratic => RobustForm::Quadratic,
            },
        };
        h.validate()?;
        Ok(h)
    }
}

pub fn save_hyper<T: Real>(h: &HyperParams<T>, embed_prior: bool) -> Result<String> {
    h.validate()?;
    to_json(&HyperDoc::from_hyper(h, embed_prior))
}

pub fn load_hyper<T: Real>(text: &str, prior: Option<PriorModel<T>>) -> Result<HyperParams<T>> {
    from_json::<HyperDoc>(text)?.to_hyper(prior)
}
