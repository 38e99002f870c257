#pragma once

namespace dfrf {

/// Process-wide setup for the command-line tools:
/// - caps OpenMP workers at DFRF_THREADS when that variable is set;
/// - keeps freed heap memory mapped, since every training step allocates and
///   releases the same large activation buffers.
/// Throws std::invalid_argument when DFRF_THREADS is not a positive integer.
void configure_runtime();

/// Workers OpenMP will use for the next parallel region.
int worker_threads();

}  // namespace dfrf
