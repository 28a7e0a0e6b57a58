//! Process-level tuning applied before any work starts.

/// Keeps large tensor buffers on the heap instead of fresh mmaps, and
/// pins OpenBLAS to its AVX-512 kernels on CPUs it misdetects.
pub fn tune() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator thresholds; called before any threads exist.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 256 << 20);
    }
    pin_openblas_core();
}

#[cfg(all(unix, target_arch = "x86_64"))]
fn pin_openblas_core() {
    use std::os::unix::process::CommandExt;

    const VAR: &str = "OPENBLAS_CORETYPE";
    if std::env::var_os(VAR).is_some() {
        return;
    }
    let avx512 = is_x86_feature_detected!("avx512f")
        && is_x86_feature_detected!("avx512dq")
        && is_x86_feature_detected!("avx512bw")
        && is_x86_feature_detected!("avx512vl");
    if !avx512 {
        return;
    }
    let Ok(exe) = std::env::current_exe() else {
        return;
    };
    // The library reads the variable once at load time, so the process is
    // restarted with it set. exec only returns on failure; carry on then.
    let _ = std::process::Command::new(exe)
        .args(std::env::args_os().skip(1))
        .env(VAR, "SkylakeX")
        .exec();
}

#[cfg(not(all(unix, target_arch = "x86_64")))]
fn pin_openblas_core() {}
