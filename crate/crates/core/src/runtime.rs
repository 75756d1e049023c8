//! Process and thread settings for training throughput.

use std::sync::Once;

/// Keeps freed large blocks in the heap instead of returning them to the
/// kernel, so every training step does not pay for fresh page faults.
/// Idempotent; a no-op off glibc.
pub fn retain_freed_memory() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        unsafe {
            const LIMIT: libc::c_int = 1 << 30;
            libc::mallopt(libc::M_MMAP_THRESHOLD, LIMIT);
            libc::mallopt(libc::M_TRIM_THRESHOLD, LIMIT);
        }
    });
}

#[cfg(target_arch = "x86_64")]
mod fp {
    // MXCSR flush-to-zero (bit 15) and denormals-are-zero (bit 6).
    pub const FLUSH: u32 = 0x8040;

    #[allow(deprecated)]
    pub fn get() -> u32 {
        unsafe { std::arch::x86_64::_mm_getcsr() }
    }

    #[allow(deprecated)]
    pub fn set(mode: u32) {
        unsafe { std::arch::x86_64::_mm_setcsr(mode) }
    }
}

#[cfg(not(target_arch = "x86_64"))]
mod fp {
    pub const FLUSH: u32 = 0;

    pub fn get() -> u32 {
        0
    }

    pub fn set(_: u32) {}
}

/// Floating-point control state of the calling thread.
pub(crate) fn fp_mode() -> u32 {
    fp::get()
}

pub(crate) fn set_fp_mode(mode: u32) {
    fp::set(mode)
}

/// Treats subnormal floats as zero on the current thread until dropped.
/// Vanishing gradients otherwise drift into the subnormal range, where x86
/// arithmetic is dramatically slower.
pub struct FlushDenormals {
    saved: u32,
}

impl FlushDenormals {
    pub fn enable() -> Self {
        let saved = fp::get();
        fp::set(saved | fp::FLUSH);
        FlushDenormals { saved }
    }
}

impl Drop for FlushDenormals {
    fn drop(&mut self) {
        fp::set(self.saved);
    }
}
