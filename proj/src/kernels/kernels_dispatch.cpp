#include "ctcbias/kernels.hpp"

#include "kernels_internal.hpp"

namespace ctcbias::kernels {

namespace {

struct Table {
    float (*dot_f32)(const float*, const float*, std::size_t);
    void (*axpy_f32)(float, const float*, float*, std::size_t);
    void (*add_f32)(const float*, const float*, float*, std::size_t);
    float (*max_f32)(const float*, std::size_t);
    std::size_t (*argmax_f32)(const float*, std::size_t);
    double (*sumsq_f32)(const float*, std::size_t);

    double (*dot_f64)(const double*, const double*, std::size_t);
    void (*axpy_f64)(double, const double*, double*, std::size_t);
    void (*add_f64)(const double*, const double*, double*, std::size_t);
    double (*max_f64)(const double*, std::size_t);
    std::size_t (*argmax_f64)(const double*, std::size_t);
    double (*sumsq_f64)(const double*, std::size_t);
};

constexpr Table kScalarTable = {
    scalar::dot_f32,  scalar::axpy_f32,   scalar::add_f32, scalar::max_f32,
    scalar::argmax_f32, scalar::sumsq_f32,
    scalar::dot_f64,  scalar::axpy_f64,   scalar::add_f64, scalar::max_f64,
    scalar::argmax_f64, scalar::sumsq_f64,
};

constexpr Table kAvx2Table = {
    avx2::dot_f32,  avx2::axpy_f32,   avx2::add_f32, avx2::max_f32,
    avx2::argmax_f32, avx2::sumsq_f32,
    avx2::dot_f64,  avx2::axpy_f64,   avx2::add_f64, avx2::max_f64,
    avx2::argmax_f64, avx2::sumsq_f64,
};

Isa detect() {
#if defined(__x86_64__) || defined(_M_X64)
    if (avx2::compiled_in() && __builtin_cpu_supports("avx2")) return Isa::Avx2;
#endif
    return Isa::Scalar;
}

Isa g_isa = detect();
const Table* g_table = (g_isa == Isa::Avx2) ? &kAvx2Table : &kScalarTable;

}  // namespace

bool avx2_supported() { return detect() == Isa::Avx2; }

Isa active_isa() { return g_isa; }

void force_isa(Isa isa) {
    if (isa == Isa::Avx2 && !avx2_supported()) isa = Isa::Scalar;
    g_isa = isa;
    g_table = (isa == Isa::Avx2) ? &kAvx2Table : &kScalarTable;
}

void reset_isa() { force_isa(detect()); }

float dot(const float* a, const float* b, std::size_t n) { return g_table->dot_f32(a, b, n); }
void axpy(float alpha, const float* x, float* y, std::size_t n) { g_table->axpy_f32(alpha, x, y, n); }
void add(const float* a, const float* b, float* out, std::size_t n) { g_table->add_f32(a, b, out, n); }
float max(const float* x, std::size_t n) { return g_table->max_f32(x, n); }
std::size_t argmax(const float* x, std::size_t n) { return g_table->argmax_f32(x, n); }
double sumsq(const float* x, std::size_t n) { return g_table->sumsq_f32(x, n); }

double dot(const double* a, const double* b, std::size_t n) { return g_table->dot_f64(a, b, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { g_table->axpy_f64(alpha, x, y, n); }
void add(const double* a, const double* b, double* out, std::size_t n) { g_table->add_f64(a, b, out, n); }
double max(const double* x, std::size_t n) { return g_table->max_f64(x, n); }
std::size_t argmax(const double* x, std::size_t n) { return g_table->argmax_f64(x, n); }
double sumsq(const double* x, std::size_t n) { return g_table->sumsq_f64(x, n); }

}  // namespace ctcbias::kernels
