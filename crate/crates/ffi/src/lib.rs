//! C ABI over `ipf-core`.
//!
//! Every fallible function returns an [`IpfStatus`]; on failure the message
//! is available from [`ipf_last_error`] on the same thread. Models and
//! datasets are opaque handles released with their `_free` function.
//! Panics never cross the boundary: they are reported as
//! `IPF_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ipf_core::dataset::{encode_clinical, load_dataset, ClinicalRecord, PatientSample, Sex, Smoking};
use ipf_core::image::HuImage;
use ipf_core::lung_mask::{extract_lung_mask, BinaryMask, MaskParams};
use ipf_core::metrics::{laplace_ll, rmse, Clip};
use ipf_core::model::prepare_slice;
use ipf_core::slope::{ols_fit, DesignPair};
use ipf_core::training::{prepare_patient, predict_prepared, Checkpoint, MaskPolicy};
use ipf_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpfStatus {
    Ok = 0,
    /// Null pointer, bad length or out-of-range argument.
    InvalidArgument = 1,
    /// Malformed or inconsistent input data, including I/O failures.
    Data = 2,
    /// Non-finite values or a singular fit.
    Numerical = 3,
    /// Mask extraction found no lung region.
    NoLungRegion = 4,
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpfSex {
    Male = 0,
    Female = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpfSmoking {
    Never = 0,
    Ex = 1,
    Current = 2,
}

/// A trained model loaded from a checkpoint.
pub struct IpfModel {
    checkpoint: Checkpoint<f64>,
}

/// A dataset directory loaded into memory.
pub struct IpfDataset {
    patients: Vec<PatientSample>,
    ids: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IpfStatus {
    match e {
        Error::NoLungRegion => IpfStatus::NoLungRegion,
        Error::Numerical(_) | Error::SingularDesign(_) => IpfStatus::Numerical,
        Error::Shape(_) => IpfStatus::InvalidArgument,
        _ => IpfStatus::Data,
    }
}

enum Failure {
    Arg(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn arg(msg: &str) -> Failure {
    Failure::Arg(msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IpfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IpfStatus::Ok
        }
        Ok(Err(Failure::Arg(m))) => {
            set_error(m);
            IpfStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            IpfStatus::Internal
        }
    }
}

unsafe fn slice_of<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Arg(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::Arg(format!("{what} is null")))
}

unsafe fn path_of<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(arg("path is null"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| arg("path is not UTF-8"))?;
    Ok(Path::new(s))
}

unsafe fn hu_image(hu: *const f32, width: usize, height: usize) -> Result<HuImage, Failure> {
    let n = width.checked_mul(height).ok_or_else(|| arg("image too large"))?;
    if n == 0 {
        return Err(arg("image is empty"));
    }
    Ok(HuImage::new(width, height, slice_of(hu, n, "hu")?.to_vec())?)
}

/// Message of the last failure on this thread, or null after a success.
/// The pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn ipf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Least-squares line through `(weeks[i], fvc[i])`.
///
/// # Safety
/// `weeks` and `fvc` must point to `n` readable values; the out pointers
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ipf_slope_fit(
    weeks: *const f64,
    fvc: *const f64,
    n: usize,
    out_intercept: *mut f64,
    out_slope: *mut f64,
) -> IpfStatus {
    guard(|| {
        let t = slice_of(weeks, n, "weeks")?;
        let m = slice_of(fvc, n, "fvc")?;
        let fit = ols_fit(&DesignPair::new(t.to_vec(), m.to_vec())?)?;
        *out_ref(out_intercept, "out_intercept")? = fit.intercept;
        *out_ref(out_slope, "out_slope")? = fit.slope;
        Ok(())
    })
}

/// Laplace log-likelihood of one prediction; `clip` non-zero applies the
/// 70 mL / 1000 mL thresholds.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ipf_laplace_ll(pred: f64, truth: f64, sigma: f64, clip: i32, out: *mut f64) -> IpfStatus {
    guard(|| {
        let clip = (clip != 0).then_some(Clip::COMPETITION);
        let v = laplace_ll(pred, truth, sigma, clip).map_err(|e| Failure::Arg(e.to_string()))?;
        *out_ref(out, "out")? = v;
        Ok(())
    })
}

/// Root-mean-square error of `n` pairs.
///
/// # Safety
/// `pred` and `truth` must point to `n` readable values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ipf_rmse(pred: *const f64, truth: *const f64, n: usize, out: *mut f64) -> IpfStatus {
    guard(|| {
        let p = slice_of(pred, n, "pred")?;
        let t = slice_of(truth, n, "truth")?;
        *out_ref(out, "out")? = rmse(p, t).map_err(|e| Failure::Arg(e.to_string()))?;
        Ok(())
    })
}

/// Lung mask of a row-major HU slice with default parameters; writes 0 or 1
/// per pixel into `out_mask`.
///
/// # Safety
/// `hu` must point to `width * height` readable floats and `out_mask` to as
/// many writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ipf_extract_lung_mask(
    hu: *const f32,
    width: usize,
    height: usize,
    out_mask: *mut u8,
) -> IpfStatus {
    guard(|| {
        let img = hu_image(hu, width, height)?;
        if out_mask.is_null() {
            return Err(arg("out_mask is null"));
        }
        let mask = extract_lung_mask(&img, &MaskParams::for_size(width, height))?;
        let out = std::slice::from_raw_parts_mut(out_mask, width * height);
        for (o, &m) in out.iter_mut().zip(mask.data()) {
            *o = u8::from(m);
        }
        Ok(())
    })
}

/// Loads a checkpoint written by `ipf train`. Returns null on failure.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ipf_model_load(path: *const c_char) -> *mut IpfModel {
    let mut model = ptr::null_mut();
    guard(|| {
        let checkpoint = Checkpoint::<f64>::load(path_of(path)?)?;
        model = Box::into_raw(Box::new(IpfModel { checkpoint }));
        Ok(())
    });
    model
}

/// # Safety
/// `model` must be null or a handle from [`ipf_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ipf_model_free(model: *mut IpfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length the model resizes slices to, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ipf_model_image_size(model: *const IpfModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.meta.model.image_size)
}

/// Slope (mL/week) predicted from one HU slice and clinical values. `mask`
/// may be null to use an all-ones gate mask; otherwise it holds
/// `width * height` bytes, non-zero inside the lung.
///
/// # Safety
/// `model` must be a live handle, `hu` must point to `width * height`
/// floats, `mask` to as many bytes when non-null, and `out_slope` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ipf_model_predict_slice(
    model: *const IpfModel,
    hu: *const f32,
    width: usize,
    height: usize,
    mask: *const u8,
    age: u32,
    sex: IpfSex,
    smoking: IpfSmoking,
    out_slope: *mut f64,
) -> IpfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| arg("model is null"))?;
        let img = hu_image(hu, width, height)?;
        let gate = if mask.is_null() {
            None
        } else {
            let bytes = slice_of(mask, width * height, "mask")?;
            Some(BinaryMask::new(width, height, bytes.iter().map(|&b| b != 0).collect())?)
        };
        let record = ClinicalRecord {
            patient_id: String::new(),
            age,
            sex: match sex {
                IpfSex::Male => Sex::Male,
                IpfSex::Female => Sex::Female,
            },
            smoking: match smoking {
                IpfSmoking::Never => Smoking::NeverSmoked,
                IpfSmoking::Ex => Smoking::ExSmoker,
                IpfSmoking::Current => Smoking::CurrentlySmokes,
            },
        };
        let ck = &m.checkpoint;
        let clinical = encode_clinical(&record, &ck.meta.norm);
        let input = prepare_slice(&img, gate.as_ref(), clinical, ck.meta.model.image_size)?;
        let slope = ck.model.predict_slope(&ck.params, &input, &ck.meta.target)?;
        *out_ref(out_slope, "out_slope")? = slope.value;
        Ok(())
    })
}

/// Loads a dataset directory (`clinical.csv` plus `ct/`). Returns null on
/// failure.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ipf_dataset_load(path: *const c_char) -> *mut IpfDataset {
    let mut ds = ptr::null_mut();
    guard(|| {
        let loaded = load_dataset(path_of(path)?)?;
        let ids = loaded
            .patients
            .iter()
            .map(|p| CString::new(p.id()).map_err(|_| arg("patient id contains NUL")))
            .collect::<Result<_, _>>()?;
        ds = Box::into_raw(Box::new(IpfDataset {
            patients: loaded.patients,
            ids,
        }));
        Ok(())
    });
    ds
}

/// # Safety
/// `dataset` must be null or a handle from [`ipf_dataset_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ipf_dataset_free(dataset: *mut IpfDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of patients, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ipf_dataset_len(dataset: *const IpfDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.patients.len())
}

/// Patient id at `index`, owned by the dataset; null when out of range.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ipf_dataset_patient_id(dataset: *const IpfDataset, index: usize) -> *const c_char {
    dataset
        .as_ref()
        .and_then(|d| d.ids.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Patient-level slope: mean over the patient's kept slices, with lung
/// masks extracted on the fly. `out_true_slope` may be null; otherwise it
/// receives the least-squares slope of the patient's FVC series.
///
/// # Safety
/// Both handles must be live and `out_slope` writable.
#[no_mangle]
pub unsafe extern "C" fn ipf_model_predict_patient(
    model: *const IpfModel,
    dataset: *const IpfDataset,
    index: usize,
    out_slope: *mut f64,
    out_true_slope: *mut f64,
) -> IpfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| arg("model is null"))?;
        let d = dataset.as_ref().ok_or_else(|| arg("dataset is null"))?;
        let sample = d
            .patients
            .get(index)
            .ok_or_else(|| Failure::Arg(format!("patient index {index} out of range")))?;
        let ck = &m.checkpoint;
        let prepared = prepare_patient(sample, ck.meta.model.image_size, &MaskPolicy::default())?;
        let pred = predict_prepared(&ck.model, &ck.params, &prepared, &ck.meta.norm, &ck.meta.target)?;
        *out_ref(out_slope, "out_slope")? = pred.predicted_slope;
        if let Some(t) = out_true_slope.as_mut() {
            *t = pred.true_slope;
        }
        Ok(())
    })
}
