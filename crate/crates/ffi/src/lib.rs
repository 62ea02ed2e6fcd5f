//! C ABI over the core crate: opaque model and board handles, integer
//! status codes, and a per-thread last-error message.
//!
//! Every function returns an [`OpcdStatus`]. Outputs go through pointers
//! the caller owns. Handles are freed with their `_free` function; passing
//! null to a `_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use opcd::distill::reverse_kl_token;
use opcd::lm::{load_model, save_model, Model, ModelConfig, Vocabulary, EOS};
use opcd::worlds::{Action, FrozenLakeState, SokobanState, Status, World};
use opcd::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpcdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Output buffer too small; the needed length is still reported.
    BufferTooSmall = 3,
    Io = 4,
    Checkpoint = 5,
    Config = 6,
    Environment = 7,
    Internal = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpcdGame {
    FrozenLake = 0,
    Sokoban = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpcdBoardStatus {
    Running = 0,
    Won = 1,
    Lost = 2,
}

/// A language model with the standard vocabulary.
pub struct OpcdModel(Model);

/// One game board.
pub struct OpcdWorld(World);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn code_of(e: &Error) -> OpcdStatus {
    match e {
        Error::Io(_) => OpcdStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => OpcdStatus::Checkpoint,
        Error::Config(_) => OpcdStatus::Config,
        Error::Environment(_) => OpcdStatus::Environment,
        Error::InvalidArgument(_)
        | Error::SequenceTooLong { .. }
        | Error::TokenOutOfRange { .. }
        | Error::TopKTooLarge { .. }
        | Error::Shape { .. } => OpcdStatus::InvalidArgument,
        _ => OpcdStatus::Internal,
    }
}

enum Fail {
    Status(OpcdStatus, String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OpcdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            OpcdStatus::Ok
        }
        Ok(Err(Fail::Status(code, msg))) => {
            set_error(msg);
            code
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            code_of(&e)
        }
        Err(_) => {
            set_error("panic inside the library");
            OpcdStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(OpcdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(OpcdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Copies `data` to `out` (capacity `cap`) and writes its length to `len`.
unsafe fn write_out<T: Copy>(data: &[T], out: *mut T, cap: usize, len: *mut usize) -> Result<(), Fail> {
    if !len.is_null() {
        *len = data.len();
    }
    if data.len() > cap {
        return Err(Fail::Status(OpcdStatus::BufferTooSmall, format!("need {} elements, have {cap}", data.len())));
    }
    if !data.is_empty() {
        if out.is_null() {
            return Err(null("output buffer"));
        }
        std::ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
    }
    Ok(())
}

/// Text into a NUL-terminated buffer; `needed` receives the byte length
/// including the terminator.
unsafe fn write_text(text: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), Fail> {
    let mut bytes = text.as_bytes().to_vec();
    bytes.push(0);
    write_out(&bytes, buf as *mut u8, cap, needed)
}

/// Copies the calling thread's last error message (empty after a success).
///
/// # Safety
/// `buf` must point to `cap` writable bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn opcd_last_error_message(buf: *mut c_char, cap: usize, needed: *mut usize) -> OpcdStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    match write_text(&msg, buf, cap, needed) {
        Ok(()) => OpcdStatus::Ok,
        Err(Fail::Status(c, _)) => c,
        Err(Fail::Core(e)) => code_of(&e),
    }
}

/// A freshly initialized model.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn opcd_model_init(
    layers: usize,
    embed_dim: usize,
    heads: usize,
    max_seq: usize,
    seed: u64,
    out: *mut *mut OpcdModel,
) -> OpcdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let vocab = Arc::new(Vocabulary::standard());
        let cfg = ModelConfig { layers, embed_dim, heads, max_seq, vocab_size: vocab.len() };
        let m = Model::init(cfg, vocab, seed)?;
        *out = Box::into_raw(Box::new(OpcdModel(m)));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn opcd_model_load(path: *const c_char, out: *mut *mut OpcdModel) -> OpcdStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = load_model(Path::new(path))?;
        *out = Box::into_raw(Box::new(OpcdModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn opcd_model_save(model: *const OpcdModel, path: *const c_char) -> OpcdStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        save_model(&m.0, Path::new(c_str(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn opcd_model_free(model: *mut OpcdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn opcd_model_vocab_size(model: *const OpcdModel, out: *mut usize) -> OpcdStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.0.vocab().len();
        Ok(())
    })
}

/// Token ids of `text` under the model's vocabulary.
///
/// # Safety
/// `out` must hold `cap` ids; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn opcd_encode(
    model: *const OpcdModel,
    text: *const c_char,
    out: *mut u32,
    cap: usize,
    len: *mut usize,
) -> OpcdStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        write_out(&m.0.vocab().encode(c_str(text, "text")?), out, cap, len)
    })
}

/// Next-token log-probabilities after `seq` (one per vocabulary entry).
///
/// # Safety
/// `seq` must hold `seq_len` ids and `out` `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn opcd_next_logprobs(
    model: *const OpcdModel,
    seq: *const u32,
    seq_len: usize,
    out: *mut f64,
    cap: usize,
) -> OpcdStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        if seq.is_null() {
            return Err(null("seq"));
        }
        let seq = std::slice::from_raw_parts(seq, seq_len);
        let row = opcd::autodiff::log_softmax(&m.0.next_logits(seq)?);
        write_out(&row, out, cap, std::ptr::null_mut())
    })
}

/// Samples up to `max_tokens` after `prefix`, stopping after end of
/// sequence. Temperature 0 is greedy.
///
/// # Safety
/// `prefix` must hold `prefix_len` ids, `out` `cap` ids; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn opcd_sample(
    model: *const OpcdModel,
    prefix: *const u32,
    prefix_len: usize,
    max_tokens: usize,
    temperature: f64,
    seed: u64,
    out: *mut u32,
    cap: usize,
    len: *mut usize,
) -> OpcdStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        if prefix.is_null() {
            return Err(null("prefix"));
        }
        let prefix = std::slice::from_raw_parts(prefix, prefix_len);
        let y = m.0.sample(prefix, max_tokens, temperature, EOS, seed)?;
        write_out(&y, out, cap, len)
    })
}

/// Per-token reverse KL between two log-probability rows of length `v`,
/// summed over the student's top `k` tokens.
///
/// # Safety
/// `student` and `teacher` must hold `v` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn opcd_reverse_kl_token(
    student: *const f64,
    teacher: *const f64,
    v: usize,
    k: usize,
    renormalize: bool,
    out: *mut f64,
) -> OpcdStatus {
    guard(|| {
        if student.is_null() || teacher.is_null() || out.is_null() {
            return Err(null("row or out"));
        }
        let s = std::slice::from_raw_parts(student, v);
        let t = std::slice::from_raw_parts(teacher, v);
        *out = reverse_kl_token(s, t, k, renormalize)?;
        Ok(())
    })
}

/// A board from `seed` with default settings.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn opcd_world_reset(game: OpcdGame, seed: u64, out: *mut *mut OpcdWorld) -> OpcdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let w = match game {
            OpcdGame::FrozenLake => World::FrozenLake(FrozenLakeState::reset(seed)?),
            OpcdGame::Sokoban => World::Sokoban(SokobanState::reset(seed)?),
        };
        *out = Box::into_raw(Box::new(OpcdWorld(w)));
        Ok(())
    })
}

/// Applies a move (`0` up, `1` down, `2` left, `3` right) and reports the
/// new status.
///
/// # Safety
/// `world` must come from this library; `status` may be null.
#[no_mangle]
pub unsafe extern "C" fn opcd_world_step(world: *mut OpcdWorld, action: u32, status: *mut OpcdBoardStatus) -> OpcdStatus {
    guard(|| {
        let w = world.as_mut().ok_or_else(|| null("world"))?;
        let a = *Action::ALL
            .get(action as usize)
            .ok_or_else(|| Fail::Status(OpcdStatus::InvalidArgument, format!("action {action} outside 0..4")))?;
        w.0 = w.0.step(a)?;
        if !status.is_null() {
            *status = match w.0.status() {
                Status::Running => OpcdBoardStatus::Running,
                Status::Won => OpcdBoardStatus::Won,
                Status::Lost => OpcdBoardStatus::Lost,
            };
        }
        Ok(())
    })
}

/// The board as text, NUL-terminated.
///
/// # Safety
/// `buf` must hold `cap` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn opcd_world_render(
    world: *const OpcdWorld,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> OpcdStatus {
    guard(|| write_text(&as_ref(world, "world")?.0.render(), buf, cap, needed))
}

/// # Safety
/// `world` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn opcd_world_free(world: *mut OpcdWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}
