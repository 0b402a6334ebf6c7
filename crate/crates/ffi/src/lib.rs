//! C ABI for the viscoflow core.
//!
//! Simulations are opaque handles created from a JSON configuration. Every
//! function returns a [`VfStatus`]; on failure the message is kept per thread
//! and read with [`vf_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use viscoflow::config::{Config, Setup};
use viscoflow::solver::{integrate_with, recover_u, NoiseDriver, RunOptions, SimState, Stepper};
use viscoflow::stochastic::NoisePath;
use viscoflow::{Error, Space};

/// Result codes. `VF_OK` is zero; every other value is an error.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidArgument = 4,
    BlowUp = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A running simulation: configuration, noise path, state and stepper.
pub struct VfSimulation {
    setup: Setup,
    path: NoisePath,
    stepper: Stepper,
    state: SimState,
    z: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> VfStatus {
    match e {
        Error::Config(_) | Error::Json(_) => VfStatus::Config,
        Error::BlowUp { .. } => VfStatus::BlowUp,
        Error::Io(_) | Error::Format(_) => VfStatus::Io,
        _ => VfStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (VfStatus, String)>) -> VfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            VfStatus::Panic
        }
    }
}

fn fail(e: Error) -> (VfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (VfStatus, String) {
    (VfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (VfStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (VfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn sim_ref<'a>(sim: *const VfSimulation) -> Result<&'a VfSimulation, (VfStatus, String)> {
    sim.as_ref().ok_or_else(|| null("simulation"))
}

unsafe fn sim_mut<'a>(sim: *mut VfSimulation) -> Result<&'a mut VfSimulation, (VfStatus, String)> {
    sim.as_mut().ok_or_else(|| null("simulation"))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), (VfStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn build(config: Config) -> Result<VfSimulation, Error> {
    let setup = config.setup()?;
    let path = config.noise_path(config.noise.seed, setup.sim.dt, config.integration.t_final)?;
    let stepper = Stepper::new(&setup.sim)?;
    let state = config.initial_state(&setup.sim)?;
    let z = if setup.sim.epsilon > 0.0 {
        NoiseDriver::stationary(&path, setup.sim.sigma, 0.0)?.z()
    } else {
        0.0
    };
    Ok(VfSimulation {
        setup,
        path,
        stepper,
        state,
        z,
    })
}

/// Creates a simulation from a JSON configuration (null for the defaults).
/// The noise path covers `[0, integration.t_final]`.
///
/// # Safety
/// `config_json` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vf_simulation_new(
    config_json: *const c_char,
    out: *mut *mut VfSimulation,
) -> VfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let config = if config_json.is_null() {
            Config::default()
        } else {
            Config::from_json(read_str(config_json, "config")?).map_err(fail)?
        };
        let sim = build(config).map_err(fail)?;
        out.write(Box::into_raw(Box::new(sim)));
        Ok(())
    })
}

/// Releases a simulation. Null is ignored.
///
/// # Safety
/// `sim` came from [`vf_simulation_new`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vf_simulation_free(sim: *mut VfSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances by `steps` solver steps. On blow-up the state is left unchanged.
///
/// # Safety
/// `sim` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn vf_simulation_step(sim: *mut VfSimulation, steps: usize) -> VfStatus {
    guard(|| {
        let s = sim_mut(sim)?;
        let cfg = &s.setup.sim;
        let mut driver = if cfg.epsilon > 0.0 {
            NoiseDriver::stationary(&s.path, cfg.sigma, s.state.t).map_err(fail)?
        } else {
            NoiseDriver::quiet()
        };
        let tr = integrate_with(
            &mut s.stepper,
            &s.state,
            &mut driver,
            RunOptions::new(steps).every(steps.max(1)),
        )
        .map_err(fail)?;
        s.state = tr.last;
        s.z = tr.last_z;
        Ok(())
    })
}

/// Current time.
///
/// # Safety
/// `sim` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vf_simulation_time(sim: *const VfSimulation, out: *mut f64) -> VfStatus {
    guard(|| write_out(out, sim_ref(sim)?.state.t))
}

/// `||v||_H^2 + ||eta||_M^2`.
///
/// # Safety
/// `sim` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vf_simulation_energy(sim: *const VfSimulation, out: *mut f64) -> VfStatus {
    guard(|| write_out(out, sim_ref(sim)?.state.energy_h()))
}

/// Current OU coefficient `z` (0 without noise).
///
/// # Safety
/// `sim` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vf_simulation_ou(sim: *const VfSimulation, out: *mut f64) -> VfStatus {
    guard(|| write_out(out, sim_ref(sim)?.z))
}

/// Modes per direction `N`; velocity buffers hold `N * N` values.
///
/// # Safety
/// `sim` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vf_simulation_grid_size(sim: *const VfSimulation, out: *mut usize) -> VfStatus {
    guard(|| write_out(out, sim_ref(sim)?.setup.sim.grid.n()))
}

/// Maximum of `|k . u(k)|` relative to `||u||_V` for the current velocity.
///
/// # Safety
/// `sim` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vf_simulation_divergence(sim: *const VfSimulation, out: *mut f64) -> VfStatus {
    guard(|| {
        let v = &sim_ref(sim)?.state.v;
        let scale = v.norm(Space::V);
        write_out(
            out,
            if scale > 0.0 {
                v.divergence_max() / scale
            } else {
                0.0
            },
        )
    })
}

/// Physical velocity `u = v + eps z h` at the grid points, row-major with
/// index `i * N + j` for the point `(i L / N, j L / N)`.
///
/// # Safety
/// `sim` is a live handle; `u1` and `u2` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vf_simulation_velocity(
    sim: *const VfSimulation,
    u1: *mut f64,
    u2: *mut f64,
    len: usize,
) -> VfStatus {
    guard(|| {
        let s = sim_ref(sim)?;
        if u1.is_null() || u2.is_null() {
            return Err(null("velocity buffer"));
        }
        let n = s.setup.sim.grid.len();
        if len < n {
            return Err((VfStatus::BufferTooSmall, format!("need {n} values, got {len}")));
        }
        let field = recover_u(&s.state, s.z, &s.setup.sim).synthesize();
        ptr::copy_nonoverlapping(field.u1.as_ptr(), u1, n);
        ptr::copy_nonoverlapping(field.u2.as_ptr(), u2, n);
        Ok(())
    })
}

/// Writes the state to a checkpoint file.
///
/// # Safety
/// `sim` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vf_simulation_save(sim: *const VfSimulation, path: *const c_char) -> VfStatus {
    guard(|| {
        let s = sim_ref(sim)?;
        let path = read_str(path, "path")?;
        let mut w = BufWriter::new(File::create(path).map_err(|e| fail(e.into()))?);
        s.state.write_to(&mut w).map_err(fail)?;
        w.flush().map_err(|e| fail(e.into()))
    })
}

/// Replaces the state with a checkpoint written by [`vf_simulation_save`].
///
/// # Safety
/// `sim` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vf_simulation_load(sim: *mut VfSimulation, path: *const c_char) -> VfStatus {
    guard(|| {
        let s = sim_mut(sim)?;
        let path = read_str(path, "path")?;
        let mut r = BufReader::new(File::open(path).map_err(|e| fail(e.into()))?);
        let state = SimState::read_from(&mut r, &s.setup.sim).map_err(fail)?;
        if s.setup.sim.epsilon > 0.0 {
            s.z = NoiseDriver::stationary(&s.path, s.setup.sim.sigma, state.t)
                .map_err(fail)?
                .z();
        }
        s.state = state;
        Ok(())
    })
}

/// Copies the calling thread's last error message, NUL-terminated, into
/// `buf` and returns its length without the NUL. With a null or short
/// buffer nothing is copied; the return value is then the size needed
/// minus one.
///
/// # Safety
/// `buf` is null or points to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn vf_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > bytes.len() {
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
            *buf.add(bytes.len()) = 0;
        }
        bytes.len()
    })
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
