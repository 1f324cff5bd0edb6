#pragma once

#include <cstddef>

// Numeric inner-loop kernels with a scalar reference implementation and an
// AVX2 variant selected at runtime. Scalar is always available and is the
// semantic reference; the SIMD variants are equivalence-tested against it.
namespace ctcbias::kernels {

enum class Isa { Scalar, Avx2 };

bool avx2_supported();

// Currently selected implementation.
Isa active_isa();

// Override the automatic selection (tests use this to compare variants).
// Requesting an unsupported ISA falls back to Scalar.
void force_isa(Isa isa);
void reset_isa();

// f32 inputs. sumsq accumulates in double: callers feed it file-loaded
// float matrices but need double-precision downstream arithmetic.
float dot(const float* a, const float* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void add(const float* a, const float* b, float* out, std::size_t n);
float max(const float* x, std::size_t n);
std::size_t argmax(const float* x, std::size_t n);  // ties -> lowest index
double sumsq(const float* x, std::size_t n);

// f64 variants (adapter training runs in double).
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void add(const double* a, const double* b, double* out, std::size_t n);
double max(const double* x, std::size_t n);
std::size_t argmax(const double* x, std::size_t n);
double sumsq(const double* x, std::size_t n);

}  // namespace ctcbias::kernels
