#pragma once

// Subnormal floats slow every arithmetic instruction that touches them by two
// orders of magnitude; late in training activations and Adam moments drift
// into that range. Network compute therefore flushes them to zero.

#if defined(__SSE2__)
#include <immintrin.h>
#endif

namespace dvnet {

/// Enables flush-to-zero and denormals-are-zero on the calling thread for its
/// lifetime and restores the previous mode afterwards. Threads spawned inside
/// the scope inherit the mode.
class FlushDenormals {
 public:
#if defined(__SSE2__)
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | kFlushToZero | kDenormalsAreZero); }
  ~FlushDenormals() { _mm_setcsr(saved_); }
#else
  FlushDenormals() = default;
#endif
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
#if defined(__SSE2__)
  static constexpr unsigned kFlushToZero = 0x8000;
  static constexpr unsigned kDenormalsAreZero = 0x0040;
  unsigned saved_;
#endif
};

}  // namespace dvnet
