#pragma once

#include <cstddef>

namespace ctcbias::kernels {

namespace scalar {
float dot_f32(const float* a, const float* b, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void add_f32(const float* a, const float* b, float* out, std::size_t n);
float max_f32(const float* x, std::size_t n);
std::size_t argmax_f32(const float* x, std::size_t n);
double sumsq_f32(const float* x, std::size_t n);

double dot_f64(const double* a, const double* b, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
void add_f64(const double* a, const double* b, double* out, std::size_t n);
double max_f64(const double* x, std::size_t n);
std::size_t argmax_f64(const double* x, std::size_t n);
double sumsq_f64(const double* x, std::size_t n);
}  // namespace scalar

namespace avx2 {
float dot_f32(const float* a, const float* b, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void add_f32(const float* a, const float* b, float* out, std::size_t n);
float max_f32(const float* x, std::size_t n);
std::size_t argmax_f32(const float* x, std::size_t n);
double sumsq_f32(const float* x, std::size_t n);

double dot_f64(const double* a, const double* b, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
void add_f64(const double* a, const double* b, double* out, std::size_t n);
double max_f64(const double* x, std::size_t n);
std::size_t argmax_f64(const double* x, std::size_t n);
double sumsq_f64(const double* x, std::size_t n);

bool compiled_in();
}  // namespace avx2

}  // namespace ctcbias::kernels
