#pragma once

// The library is compiled twice: once with 32-bit reals (the production
// build) and once with 64-bit reals for finite-difference gradient checks.
// The inline namespace keeps both variants linkable into one binary.

#if defined(ACE_REAL_DOUBLE)
#define ACE_NAMESPACE_BEGIN \
  namespace ace {           \
  inline namespace f64 {
#else
#define ACE_NAMESPACE_BEGIN \
  namespace ace {           \
  inline namespace f32 {
#endif

#define ACE_NAMESPACE_END \
  }                       \
  }

ACE_NAMESPACE_BEGIN

#if defined(ACE_REAL_DOUBLE)
using Real = double;
#else
using Real = float;
#endif

ACE_NAMESPACE_END
