//! C ABI over the `pasia` analyzer.
//!
//! Every function returns a [`PasiaStatus`]; on failure the message is
//! available from [`pasia_last_error`] until the next call on the same
//! thread. Objects are opaque handles released with their `_free` function.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use pasia::checkpoint::SavedModel;
use pasia::corpus::{parse_sentences, Sentence};
use pasia::decoder::{decode, format_predictions};
use pasia::evaluation::permutation_test;
use pasia::model::SentenceInput;
use pasia::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PasiaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Usage = 3,
    Io = 4,
    Parse = 5,
    Integrity = 6,
    Format = 7,
    Numerical = 8,
    Dimension = 9,
    OutOfRange = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Parsed sentences.
pub struct PasiaCorpus {
    sentences: Vec<Sentence>,
}

/// A trained model loaded from a model directory.
pub struct PasiaModel {
    saved: SavedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PasiaStatus {
    match e {
        Error::Dimension { .. } => PasiaStatus::Dimension,
        Error::Usage(_) => PasiaStatus::Usage,
        Error::Parse { .. } => PasiaStatus::Parse,
        Error::Integrity { .. } => PasiaStatus::Integrity,
        Error::Format(_) => PasiaStatus::Format,
        Error::Numerical(_) => PasiaStatus::Numerical,
        Error::Io { .. } => PasiaStatus::Io,
    }
}

struct Failure(PasiaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PasiaStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PasiaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PasiaStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(PasiaStatus::NullArgument, format!("{name} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PasiaStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

fn sentence(c: &PasiaCorpus, index: usize) -> Result<&Sentence, Failure> {
    c.sentences.get(index).ok_or_else(|| {
        Failure(
            PasiaStatus::OutOfRange,
            format!("sentence index {index} out of range (corpus has {})", c.sentences.len()),
        )
    })
}

/// Parses corpus text. On success `*out` owns a new corpus.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pasia_corpus_parse(text: *const c_char, out: *mut *mut PasiaCorpus) -> PasiaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let sentences = parse_sentences(read_str(text, "text")?)?;
        *out = Box::into_raw(Box::new(PasiaCorpus { sentences }));
        Ok(())
    })
}

/// # Safety
/// `corpus` must come from [`pasia_corpus_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pasia_corpus_free(corpus: *mut PasiaCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of sentences, 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live corpus handle.
#[no_mangle]
pub unsafe extern "C" fn pasia_corpus_len(corpus: *const PasiaCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.sentences.len())
}

/// Token and predicate counts of one sentence.
///
/// # Safety
/// `corpus` must be a live corpus handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pasia_corpus_sentence_shape(
    corpus: *const PasiaCorpus,
    index: usize,
    tokens: *mut usize,
    predicates: *mut usize,
) -> PasiaStatus {
    guard(|| {
        let s = sentence(handle(corpus, "corpus")?, index)?;
        if tokens.is_null() || predicates.is_null() {
            return Err(null("out"));
        }
        *tokens = s.len();
        *predicates = s.num_predicates();
        Ok(())
    })
}

/// Loads a model directory written by `pasia train`.
///
/// # Safety
/// `dir` must be a NUL-terminated path and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pasia_model_load(dir: *const c_char, out: *mut *mut PasiaModel) -> PasiaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let saved = SavedModel::load(Path::new(read_str(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(PasiaModel { saved }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`pasia_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pasia_model_free(model: *mut PasiaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Label distributions for one sentence, laid out as
/// `[predicate][token][NOM, ACC, DAT, NONE]`. `*len` always receives the
/// required length; if `buf` is null or `cap` is smaller, nothing is written
/// and `PASIA_STATUS_BUFFER_TOO_SMALL` is returned. Sentences without
/// predicates need no buffer.
///
/// # Safety
/// Handles must be live; `buf` must hold `cap` doubles; `len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pasia_model_label_probabilities(
    model: *const PasiaModel,
    corpus: *const PasiaCorpus,
    index: usize,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> PasiaStatus {
    guard(|| {
        let m = &handle(model, "model")?.saved;
        let s = sentence(handle(corpus, "corpus")?, index)?;
        if len.is_null() {
            return Err(null("len"));
        }
        let need = s.num_predicates() * s.len() * 4;
        *len = need;
        if cap < need || (buf.is_null() && need > 0) {
            return Err(Failure(
                PasiaStatus::BufferTooSmall,
                format!("buffer holds {cap} values, {need} needed"),
            ));
        }
        if need == 0 {
            return Ok(());
        }
        let p = m.model.label_probabilities(&SentenceInput::new(&m.vocab, s))?;
        let out = std::slice::from_raw_parts_mut(buf, need);
        for i in 0..s.num_predicates() {
            for t in 0..s.len() {
                let k = (i * s.len() + t) * 4;
                out[k..k + 4].copy_from_slice(p.row(i, t));
            }
        }
        Ok(())
    })
}

/// Decodes every sentence with the model's tuned thresholds. `*out`
/// receives prediction lines `<sent_id> <pred> <label> <token|-> <prob>`
/// (1-based) to be released with [`pasia_string_free`].
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pasia_model_predict(
    model: *const PasiaModel,
    corpus: *const PasiaCorpus,
    out: *mut *mut c_char,
) -> PasiaStatus {
    guard(|| {
        let m = &handle(model, "model")?.saved;
        let c = handle(corpus, "corpus")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut lines = String::new();
        for s in &c.sentences {
            if s.num_predicates() == 0 {
                continue;
            }
            let p = m.model.label_probabilities(&SentenceInput::new(&m.vocab, s))?;
            format_predictions(s, &decode(&p, &m.thresholds, s), &mut lines);
        }
        *out = CString::new(lines)
            .map_err(|_| Failure(PasiaStatus::InvalidUtf8, "output contains NUL".into()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn pasia_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// One-sided permutation test that `mean(a) > mean(b)`.
///
/// # Safety
/// `a` and `b` must hold `a_len` and `b_len` doubles; `p_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pasia_permutation_test(
    a: *const f64,
    a_len: usize,
    b: *const f64,
    b_len: usize,
    p_value: *mut f64,
) -> PasiaStatus {
    guard(|| {
        if a.is_null() || b.is_null() || p_value.is_null() {
            return Err(null("argument"));
        }
        let r = permutation_test(std::slice::from_raw_parts(a, a_len), std::slice::from_raw_parts(b, b_len))?;
        *p_value = r.p_value;
        Ok(())
    })
}

/// Message of the last failed call on this thread, empty after success.
/// Valid until the next call into the library.
#[no_mangle]
pub extern "C" fn pasia_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pasia_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version"),
    };
    VERSION.as_ptr()
}
