#include "ctcbias/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "ctcbias/errors.hpp"
#include "ctcbias/kernels.hpp"
#include "ctcbias/tokenizer.hpp"

namespace ctcbias {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double lse2(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// y = W x for W [m, n]
void matvec(const Tensor& w, const double* x, double* y) {
    const int m = w.rows();
    const int n = w.cols();
    for (int i = 0; i < m; ++i) y[i] = kernels::dot(w.row(i), x, static_cast<std::size_t>(n));
}

// y += W^T d for W [m, n], d of length m
void matvec_t_acc(const Tensor& w, const double* d, double* y) {
    const int m = w.rows();
    const int n = w.cols();
    for (int i = 0; i < m; ++i) kernels::axpy(d[i], w.row(i), y, static_cast<std::size_t>(n));
}

// G += d x^T for G [m, n]
void outer_acc(Tensor& g, const double* d, const double* x) {
    const int m = g.rows();
    const int n = g.cols();
    for (int i = 0; i < m; ++i) kernels::axpy(d[i], x, g.row(i), static_cast<std::size_t>(n));
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

void fill_uniform(Tensor& t, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data) v = dist(rng);
}

void fill_normal(Tensor& t, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : t.data) v = dist(rng) * scale;
}

// One recurrent step's saved activations, gate order i,f,g,o.
struct LstmStep {
    std::vector<double> x, i, f, g, o, c, tanh_c, h;
};

struct LstmTrace {
    std::vector<LstmStep> steps;
};

// Runs the whole sequence; returns the final hidden state (zeros for an
// empty input, though callers reject that earlier).
std::vector<double> lstm_forward(const Tensor& wih, const Tensor& whh, const Tensor& b,
                                 const std::vector<const double*>& inputs, LstmTrace* trace) {
    const int h4 = wih.rows();
    const int h = h4 / 4;
    const int in_dim = wih.cols();
    std::vector<double> h_prev(static_cast<std::size_t>(h), 0.0);
    std::vector<double> c_prev(static_cast<std::size_t>(h), 0.0);
    std::vector<double> z(static_cast<std::size_t>(h4));
    for (const double* x : inputs) {
        matvec(wih, x, z.data());
        std::vector<double> rec(static_cast<std::size_t>(h4));
        matvec(whh, h_prev.data(), rec.data());
        for (int k = 0; k < h4; ++k) z[static_cast<std::size_t>(k)] +=
            rec[static_cast<std::size_t>(k)] + b.data[static_cast<std::size_t>(k)];

        LstmStep step;
        step.x.assign(x, x + in_dim);
        step.i.resize(static_cast<std::size_t>(h));
        step.f.resize(static_cast<std::size_t>(h));
        step.g.resize(static_cast<std::size_t>(h));
        step.o.resize(static_cast<std::size_t>(h));
        step.c.resize(static_cast<std::size_t>(h));
        step.tanh_c.resize(static_cast<std::size_t>(h));
        step.h.resize(static_cast<std::size_t>(h));
        for (int k = 0; k < h; ++k) {
            auto ku = static_cast<std::size_t>(k);
            step.i[ku] = sigmoid(z[ku]);
            step.f[ku] = sigmoid(z[static_cast<std::size_t>(h) + ku]);
            step.g[ku] = std::tanh(z[2 * static_cast<std::size_t>(h) + ku]);
            step.o[ku] = sigmoid(z[3 * static_cast<std::size_t>(h) + ku]);
            step.c[ku] = step.f[ku] * c_prev[ku] + step.i[ku] * step.g[ku];
            step.tanh_c[ku] = std::tanh(step.c[ku]);
            step.h[ku] = step.o[ku] * step.tanh_c[ku];
        }
        h_prev = step.h;
        c_prev = step.c;
        if (trace) trace->steps.push_back(std::move(step));
    }
    return h_prev;
}

// Backprop through time from the gradient at the final hidden state only;
// accumulates weight gradients and writes per-step input gradients.
void lstm_backward(const Tensor& wih, const Tensor& whh, const LstmTrace& trace,
                   const std::vector<double>& dh_final, Tensor& gwih, Tensor& gwhh, Tensor& gb,
                   std::vector<std::vector<double>>& dx) {
    const int h = static_cast<int>(dh_final.size());
    const int h4 = 4 * h;
    const int steps = static_cast<int>(trace.steps.size());
    dx.assign(static_cast<std::size_t>(steps), {});
    std::vector<double> dh = dh_final;
    std::vector<double> dc(static_cast<std::size_t>(h), 0.0);
    std::vector<double> dz(static_cast<std::size_t>(h4));
    const std::vector<double> zeros(static_cast<std::size_t>(h), 0.0);
    for (int t = steps - 1; t >= 0; --t) {
        const LstmStep& s = trace.steps[static_cast<std::size_t>(t)];
        const std::vector<double>& c_prev = t > 0 ? trace.steps[static_cast<std::size_t>(t - 1)].c
                                                  : zeros;
        const std::vector<double>& h_prev = t > 0 ? trace.steps[static_cast<std::size_t>(t - 1)].h
                                                  : zeros;
        for (int k = 0; k < h; ++k) {
            auto ku = static_cast<std::size_t>(k);
            double do_ = dh[ku] * s.tanh_c[ku];
            double dck = dc[ku] + dh[ku] * s.o[ku] * (1.0 - s.tanh_c[ku] * s.tanh_c[ku]);
            double di = dck * s.g[ku];
            double dg = dck * s.i[ku];
            double df = dck * c_prev[ku];
            dc[ku] = dck * s.f[ku];  // becomes dc_{t-1}
            dz[ku] = di * s.i[ku] * (1.0 - s.i[ku]);
            dz[static_cast<std::size_t>(h) + ku] = df * s.f[ku] * (1.0 - s.f[ku]);
            dz[2 * static_cast<std::size_t>(h) + ku] = dg * (1.0 - s.g[ku] * s.g[ku]);
            dz[3 * static_cast<std::size_t>(h) + ku] = do_ * s.o[ku] * (1.0 - s.o[ku]);
        }
        outer_acc(gwih, dz.data(), s.x.data());
        outer_acc(gwhh, dz.data(), h_prev.data());
        for (int k = 0; k < h4; ++k) gb.data[static_cast<std::size_t>(k)] +=
            dz[static_cast<std::size_t>(k)];
        dx[static_cast<std::size_t>(t)].assign(s.x.size(), 0.0);
        matvec_t_acc(wih, dz.data(), dx[static_cast<std::size_t>(t)].data());
        std::fill(dh.begin(), dh.end(), 0.0);
        matvec_t_acc(whh, dz.data(), dh.data());
    }
}

struct EntityTrace {
    std::vector<int> pieces;
    LstmTrace fw, bw;
};

CatalogCache encode_catalog_impl(const std::vector<std::string>& entities,
                                 const AdapterParams& params, const SubwordVocab& vocab,
                                 std::vector<EntityTrace>* traces) {
    const int d = params.d;
    const int h = d / 2;
    CatalogCache cache;
    cache.source_hash = catalog_hash(entities);
    cache.c_e = Tensor::zeros({static_cast<int>(entities.size()) + 1, d});
    for (std::size_t j = 0; j < entities.size(); ++j) {
        Segmentation seg = segment_phrase_greedy(entities[j], vocab);
        if (seg.piece_ids.empty())
            throw InvalidArgument("catalog entity has no pieces: '" + entities[j] + "'");
        std::vector<const double*> fwd, bwd;
        for (int id : seg.piece_ids) fwd.push_back(params.phi.row(id));
        bwd.assign(fwd.rbegin(), fwd.rend());

        EntityTrace trace;
        trace.pieces = seg.piece_ids;
        std::vector<double> hf = lstm_forward(params.lstm_fw_wih, params.lstm_fw_whh,
                                              params.lstm_fw_b, fwd,
                                              traces ? &trace.fw : nullptr);
        std::vector<double> hb = lstm_forward(params.lstm_bw_wih, params.lstm_bw_whh,
                                              params.lstm_bw_b, bwd,
                                              traces ? &trace.bw : nullptr);
        double* row = cache.c_e.row(static_cast<int>(j));
        std::copy(hf.begin(), hf.end(), row);
        std::copy(hb.begin(), hb.end(), row + h);
        if (traces) traces->push_back(std::move(trace));
    }
    std::copy(params.no_bias.data.begin(), params.no_bias.data.end(),
              cache.c_e.row(cache.c_e.rows() - 1));
    return cache;
}

// Attention intermediates kept for the backward pass.
struct BiasingTrace {
    Tensor q;     // [T, d]
    Tensor qp;    // [T, A]
    Tensor keys;  // [K, A]
    Tensor vals;  // [K, d]
    Tensor attn;  // [T, K]
    Tensor bias;  // [T, d]
};

void validate_taps(const std::vector<const Tensor*>& taps, const AdapterParams& params) {
    if (static_cast<int>(taps.size()) != params.tap_w.rows())
        throw InvalidArgument("tap count " + std::to_string(taps.size()) +
                              " does not match mixing weights " +
                              std::to_string(params.tap_w.rows()));
    for (const Tensor* t : taps) {
        if (t->cols() != params.d) throw InvalidArgument("tap output dimension mismatch");
        if (t->rows() != taps[0]->rows()) throw InvalidArgument("tap frame count mismatch");
    }
}

BiasingTrace biasing_forward_impl(const std::vector<const Tensor*>& taps,
                                  const CatalogCache& cache, const AdapterParams& params) {
    validate_taps(taps, params);
    if (cache.c_e.cols() != params.d)
        throw InvalidArgument("catalog embedding dimension mismatch");
    const int t_frames = taps.empty() ? 0 : taps[0]->rows();
    const int d = params.d;
    const int a = params.attn_dim;
    const int k_rows = cache.c_e.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(a));

    BiasingTrace tr;
    tr.q = Tensor::zeros({t_frames, d});
    for (std::size_t i = 0; i < taps.size(); ++i) {
        double w = params.tap_w.data[i];
        for (int t = 0; t < t_frames; ++t)
            kernels::axpy(w, taps[i]->row(t), tr.q.row(t), static_cast<std::size_t>(d));
    }
    tr.qp = Tensor::zeros({t_frames, a});
    for (int t = 0; t < t_frames; ++t) matvec(params.wq, tr.q.row(t), tr.qp.row(t));
    tr.keys = Tensor::zeros({k_rows, a});
    tr.vals = Tensor::zeros({k_rows, d});
    for (int j = 0; j < k_rows; ++j) {
        matvec(params.wk, cache.c_e.row(j), tr.keys.row(j));
        matvec(params.wv, cache.c_e.row(j), tr.vals.row(j));
    }
    tr.attn = Tensor::zeros({t_frames, k_rows});
    tr.bias = Tensor::zeros({t_frames, d});
    std::vector<double> scores(static_cast<std::size_t>(k_rows));
    for (int t = 0; t < t_frames; ++t) {
        for (int j = 0; j < k_rows; ++j)
            scores[static_cast<std::size_t>(j)] =
                kernels::dot(tr.qp.row(t), tr.keys.row(j), static_cast<std::size_t>(a)) * scale;
        double m = kernels::max(scores.data(), scores.size());
        double z = 0.0;
        for (double s : scores) z += std::exp(s - m);
        double* arow = tr.attn.row(t);
        for (int j = 0; j < k_rows; ++j) {
            arow[j] = std::exp(scores[static_cast<std::size_t>(j)] - m) / z;
            kernels::axpy(arow[j], tr.vals.row(j), tr.bias.row(t), static_cast<std::size_t>(d));
        }
    }
    return tr;
}

AdapterParams zero_like(const AdapterParams& p) {
    AdapterParams z = p;
    for (auto& [name, tensor] : z.tensors()) {
        (void)name;
        std::fill(tensor->data.begin(), tensor->data.end(), 0.0);
    }
    return z;
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape) {
    Tensor t;
    t.shape = std::move(shape);
    std::size_t n = 1;
    for (int dim : t.shape) n *= static_cast<std::size_t>(dim);
    t.data.assign(t.shape.empty() ? 0 : n, 0.0);
    return t;
}

std::vector<std::pair<std::string, Tensor*>> AdapterParams::tensors() {
    return {{"phi", &phi},
            {"lstm_fw_wih", &lstm_fw_wih},
            {"lstm_fw_whh", &lstm_fw_whh},
            {"lstm_fw_b", &lstm_fw_b},
            {"lstm_bw_wih", &lstm_bw_wih},
            {"lstm_bw_whh", &lstm_bw_whh},
            {"lstm_bw_b", &lstm_bw_b},
            {"no_bias", &no_bias},
            {"tap_w", &tap_w},
            {"wq", &wq},
            {"wk", &wk},
            {"wv", &wv}};
}

std::vector<std::pair<std::string, const Tensor*>> AdapterParams::tensors() const {
    auto mut = const_cast<AdapterParams*>(this)->tensors();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [name, tensor] : mut) out.emplace_back(name, tensor);
    return out;
}

AdapterParams init_adapter(int vocab_size, int d, int attn_dim, int taps, std::uint64_t seed) {
    if (vocab_size < 2) throw InvalidArgument("adapter needs at least two pieces");
    if (d <= 0 || d % 2 != 0) throw InvalidArgument("embedding dimension must be positive even");
    if (attn_dim <= 0) throw InvalidArgument("attention dimension must be positive");
    if (taps < 1) throw InvalidArgument("at least one encoder tap required");
    const int h = d / 2;
    AdapterParams p;
    p.d = d;
    p.attn_dim = attn_dim;
    p.phi = Tensor::zeros({vocab_size, d});
    p.lstm_fw_wih = Tensor::zeros({4 * h, d});
    p.lstm_fw_whh = Tensor::zeros({4 * h, h});
    p.lstm_fw_b = Tensor::zeros({4 * h});
    p.lstm_bw_wih = Tensor::zeros({4 * h, d});
    p.lstm_bw_whh = Tensor::zeros({4 * h, h});
    p.lstm_bw_b = Tensor::zeros({4 * h});
    p.no_bias = Tensor::zeros({d});
    p.tap_w = Tensor::zeros({taps});
    p.wq = Tensor::zeros({attn_dim, d});
    p.wk = Tensor::zeros({attn_dim, d});
    p.wv = Tensor::zeros({d, d});
    std::mt19937_64 rng(seed);
    for (auto& [name, tensor] : p.tensors()) {
        // piece embeddings start wider so catalog encodings are separated
        // from the first step, which speeds up query/key alignment
        double scale = std::string_view(name) == "phi" ? 0.5 : 0.1;
        fill_uniform(*tensor, rng, -scale, scale);
    }
    // mean-pool warm start: queries carry full-magnitude encoder content
    // immediately instead of a near-zero random mix of taps
    std::fill(p.tap_w.data.begin(), p.tap_w.data.end(), 1.0 / taps);
    return p;
}

std::uint64_t catalog_hash(const std::vector<std::string>& entities) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
    auto mix = [&h](unsigned char byte) {
        h ^= byte;
        h *= 1099511628211ULL;
    };
    for (const std::string& e : entities) {
        for (char c : e) mix(static_cast<unsigned char>(c));
        mix(0x1f);
    }
    return h;
}

CatalogCache encode_catalog(const std::vector<std::string>& entities, const AdapterParams& params,
                            const SubwordVocab& vocab) {
    return encode_catalog_impl(entities, params, vocab, nullptr);
}

const CatalogCache& CachedCatalogEncoder::get(const std::vector<std::string>& entities,
                                              const AdapterParams& params,
                                              const SubwordVocab& vocab) {
    std::uint64_t hash = catalog_hash(entities);
    if (!cache_ || cache_->source_hash != hash) {
        cache_ = encode_catalog(entities, params, vocab);
        ++builds_;
    }
    return *cache_;
}

std::vector<int> SyntheticEncoder::default_taps() const {
    std::vector<int> taps{(3 * layers + 9) / 10, (6 * layers + 9) / 10, layers};
    taps.erase(std::unique(taps.begin(), taps.end()), taps.end());
    return taps;
}

namespace {

// strengths of the synthetic base system's output head
constexpr double kHeadStrongScale = 3.0;  // decoded piece-feature directions
constexpr double kHeadBlankBias = 2.0;    // blank preference on unclear frames

// Orthonormalize the columns in place (modified Gram-Schmidt); requires
// rows >= cols, which holds for every layer here.
void orthonormalize_columns(Tensor& w, std::mt19937_64& rng) {
    const int m = w.rows();
    const int n = w.cols();
    for (int j = 0; j < n; ++j) {
        for (int k = 0; k < j; ++k) {
            double proj = 0.0;
            for (int i = 0; i < m; ++i) proj += w.at(i, j) * w.at(i, k);
            for (int i = 0; i < m; ++i) w.at(i, j) -= proj * w.at(i, k);
        }
        double norm = 0.0;
        for (int i = 0; i < m; ++i) norm += w.at(i, j) * w.at(i, j);
        norm = std::sqrt(norm);
        if (norm < 1e-9) {  // degenerate draw; re-roll the column
            std::normal_distribution<double> dist(0.0, 1.0);
            for (int i = 0; i < m; ++i) w.at(i, j) = dist(rng);
            --j;
            continue;
        }
        for (int i = 0; i < m; ++i) w.at(i, j) /= norm;
    }
}

}  // namespace

SyntheticEncoder make_synthetic_encoder(int layers, int input_dim, int d, int vocab,
                                        std::uint64_t seed,
                                        const std::vector<int>& weak_pieces) {
    if (layers < 1 || input_dim < 1 || d < 1 || vocab < 2)
        throw InvalidArgument("bad synthetic encoder shape");
    if (d < input_dim) throw InvalidArgument("encoder cannot narrow the features");
    SyntheticEncoder enc;
    enc.layers = layers;
    enc.input_dim = input_dim;
    enc.d = d;
    enc.vocab = vocab;
    std::mt19937_64 rng(seed);
    int prev = input_dim;
    for (int i = 0; i < layers; ++i) {
        Tensor w = Tensor::zeros({d, prev});
        fill_normal(w, rng, 1.0);
        orthonormalize_columns(w, rng);
        enc.layer_w.push_back(std::move(w));
        enc.layer_b.push_back(Tensor::zeros({d}));
        prev = d;
    }

    std::vector<bool> weak(static_cast<std::size_t>(vocab), false);
    for (int id : weak_pieces) {
        if (id < 0 || id >= vocab) throw InvalidArgument("weak piece id out of range");
        weak[static_cast<std::size_t>(id)] = true;
    }
    enc.out_w = Tensor::zeros({vocab, d});
    enc.out_b = Tensor::zeros({vocab});
    const int blank = vocab - 1;
    std::vector<double> f(static_cast<std::size_t>(input_dim));
    std::vector<double> chained(static_cast<std::size_t>(d));
    for (int k = 0; k < vocab; ++k) {
        if (k == blank) {
            enc.out_b.data[static_cast<std::size_t>(k)] = kHeadBlankBias;
            continue;
        }
        if (weak[static_cast<std::size_t>(k)]) {
            std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
            for (int j = 0; j < d; ++j) enc.out_w.at(k, j) = dist(rng);
            // parity with the blank baseline: a uniform raise-all correction
            // then buys almost nothing, so bias only pays off when it is
            // specific to the piece actually spoken
            enc.out_b.data[static_cast<std::size_t>(k)] = kHeadBlankBias;
            continue;
        }
        piece_feature(k, input_dim, f.data());
        double norm = std::sqrt(kernels::sumsq(f.data(), f.size()));
        // push the unit feature direction through the (orthonormal) stack so
        // the head row decodes it directly from the top layer
        std::vector<double> cur(f);
        for (const Tensor& w : enc.layer_w) {
            std::fill(chained.begin(), chained.end(), 0.0);
            for (int j = 0; j < w.cols(); ++j)
                for (int i = 0; i < w.rows(); ++i)
                    chained[static_cast<std::size_t>(i)] += w.at(i, j) * cur[static_cast<std::size_t>(j)];
            cur.assign(chained.begin(), chained.begin() + w.rows());
        }
        for (int j = 0; j < d; ++j)
            enc.out_w.at(k, j) = kHeadStrongScale / norm * cur[static_cast<std::size_t>(j)];
    }
    return enc;
}

std::vector<Tensor> encoder_forward(const SyntheticEncoder& encoder, const Tensor& features) {
    if (features.cols() != encoder.input_dim && features.rows() > 0)
        throw InvalidArgument("feature dimension does not match the encoder");
    const int t_frames = features.rows();
    std::vector<Tensor> outputs;
    const Tensor* prev = &features;
    for (int i = 0; i < encoder.layers; ++i) {
        Tensor out = Tensor::zeros({t_frames, encoder.d});
        for (int t = 0; t < t_frames; ++t) {
            matvec(encoder.layer_w[static_cast<std::size_t>(i)], prev->row(t), out.row(t));
            kernels::add(out.row(t), encoder.layer_b[static_cast<std::size_t>(i)].data.data(),
                         out.row(t), static_cast<std::size_t>(encoder.d));
        }
        outputs.push_back(std::move(out));
        prev = &outputs.back();
    }
    return outputs;
}

BiasingResult biasing_forward(const std::vector<Tensor>& tap_outputs, const CatalogCache& cache,
                              const AdapterParams& params, bool enforce_no_bias) {
    std::vector<const Tensor*> taps;
    for (const Tensor& t : tap_outputs) taps.push_back(&t);
    BiasingTrace tr = biasing_forward_impl(taps, cache, params);
    BiasingResult out;
    out.attention = std::move(tr.attn);
    out.bias = std::move(tr.bias);
    if (enforce_no_bias) {
        const int nb_row = out.attention.cols() - 1;
        for (int t = 0; t < out.attention.rows(); ++t) {
            // argmax breaks ties toward the lowest index, so an exact tie
            // with an entity row keeps the bias.
            std::size_t best = kernels::argmax(out.attention.row(t),
                                               static_cast<std::size_t>(out.attention.cols()));
            if (static_cast<int>(best) == nb_row)
                std::fill(out.bias.row(t), out.bias.row(t) + out.bias.cols(), 0.0);
        }
    }
    return out;
}

Tensor apply_bias(const Tensor& e_top, const Tensor& bias) {
    if (e_top.rows() != bias.rows() || e_top.cols() != bias.cols())
        throw InvalidArgument("bias shape does not match the encoder output");
    Tensor out = e_top;
    kernels::add(out.data.data(), bias.data.data(), out.data.data(), out.data.size());
    return out;
}

CtcLoss ctc_loss(const Tensor& logits, const std::vector<int>& labels) {
    const int t_frames = logits.rows();
    const int v = logits.cols();
    if (t_frames > 0 && v < 2) throw InvalidArgument("logits need at least two classes");
    const int blank = v - 1;
    for (int id : labels)
        if (id < 0 || id >= blank)
            throw InvalidArgument("label id " + std::to_string(id) + " outside [0, blank)");

    CtcLoss result;
    result.grad = Tensor::zeros({t_frames, v});
    if (t_frames == 0) {
        if (!labels.empty()) {
            result.loss = std::numeric_limits<double>::infinity();
            result.feasible = false;
        }
        return result;
    }

    // log-softmax rows
    Tensor lp = Tensor::zeros({t_frames, v});
    for (int t = 0; t < t_frames; ++t) {
        const double* row = logits.row(t);
        double m = kernels::max(row, static_cast<std::size_t>(v));
        double z = 0.0;
        for (int k = 0; k < v; ++k) z += std::exp(row[k] - m);
        double l = m + std::log(z);
        for (int k = 0; k < v; ++k) lp.at(t, k) = row[k] - l;
    }

    // blank-interleaved label lattice
    const int s_len = 2 * static_cast<int>(labels.size()) + 1;
    auto sym = [&](int s) { return s % 2 == 0 ? blank : labels[static_cast<std::size_t>(s / 2)]; };
    auto can_skip = [&](int s) {  // entering state s from s-2
        return s >= 2 && sym(s) != blank && sym(s) != sym(s - 2);
    };

    std::vector<std::vector<double>> la(static_cast<std::size_t>(t_frames),
                                        std::vector<double>(static_cast<std::size_t>(s_len),
                                                            kNegInf));
    la[0][0] = lp.at(0, blank);
    if (s_len > 1) la[0][1] = lp.at(0, sym(1));
    for (int t = 1; t < t_frames; ++t)
        for (int s = 0; s < s_len; ++s) {
            double acc = la[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(s)];
            if (s >= 1)
                acc = lse2(acc, la[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(s - 1)]);
            if (can_skip(s))
                acc = lse2(acc, la[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(s - 2)]);
            la[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)] =
                acc == kNegInf ? kNegInf : acc + lp.at(t, sym(s));
        }
    double lz = la[static_cast<std::size_t>(t_frames - 1)][static_cast<std::size_t>(s_len - 1)];
    if (s_len > 1)
        lz = lse2(lz, la[static_cast<std::size_t>(t_frames - 1)][static_cast<std::size_t>(s_len - 2)]);
    if (lz == kNegInf) {
        result.loss = std::numeric_limits<double>::infinity();
        result.feasible = false;
        return result;
    }

    // suffix scores excluding the current frame's emission, so that
    // sum_s la[t][s] + lb[t][s] is the total log-probability at every t
    std::vector<std::vector<double>> lb(static_cast<std::size_t>(t_frames),
                                        std::vector<double>(static_cast<std::size_t>(s_len),
                                                            kNegInf));
    lb[static_cast<std::size_t>(t_frames - 1)][static_cast<std::size_t>(s_len - 1)] = 0.0;
    if (s_len > 1) lb[static_cast<std::size_t>(t_frames - 1)][static_cast<std::size_t>(s_len - 2)] = 0.0;
    for (int t = t_frames - 2; t >= 0; --t)
        for (int s = 0; s < s_len; ++s) {
            double acc = lp.at(t + 1, sym(s)) +
                         lb[static_cast<std::size_t>(t + 1)][static_cast<std::size_t>(s)];
            if (s + 1 < s_len)
                acc = lse2(acc, lp.at(t + 1, sym(s + 1)) +
                                    lb[static_cast<std::size_t>(t + 1)][static_cast<std::size_t>(s + 1)]);
            if (s + 2 < s_len && can_skip(s + 2))
                acc = lse2(acc, lp.at(t + 1, sym(s + 2)) +
                                    lb[static_cast<std::size_t>(t + 1)][static_cast<std::size_t>(s + 2)]);
            lb[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)] = acc;
        }

    result.loss = -lz;
    for (int t = 0; t < t_frames; ++t) {
        std::vector<double> occ(static_cast<std::size_t>(v), 0.0);
        for (int s = 0; s < s_len; ++s) {
            double g = la[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)] +
                       lb[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)];
            if (g != kNegInf) occ[static_cast<std::size_t>(sym(s))] += std::exp(g - lz);
        }
        for (int k = 0; k < v; ++k)
            result.grad.at(t, k) = std::exp(lp.at(t, k)) - occ[static_cast<std::size_t>(k)];
    }
    return result;
}

void piece_feature(int piece_id, int feature_dim, double* out) {
    for (int j = 0; j < feature_dim; ++j) {
        std::uint64_t h = splitmix64(0xC0FFEEULL + 1000003ULL * static_cast<std::uint64_t>(piece_id) +
                                     static_cast<std::uint64_t>(j));
        out[j] = 2.0 * (static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0)) - 1.0;
    }
}

RareTrainingSet make_rare_training_set(const std::vector<std::vector<std::string>>& transcripts,
                                       const SubwordVocab& vocab, const RareSetConfig& config) {
    if (config.threshold < 1) throw InvalidArgument("rarity threshold must be positive");
    if (config.frames_per_piece < 1 || config.feature_dim < 1 || config.distractors < 0)
        throw InvalidArgument("bad training-set shape");
    std::map<std::string, int> counts;
    for (const auto& utt : transcripts)
        for (const std::string& w : utt) ++counts[w];

    RareTrainingSet set;
    for (const auto& [word, count] : counts)
        if (count < config.threshold) set.rare_vocab.push_back(word);

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> jitter(0.0, 1.0);
    for (const auto& utt : transcripts) {
        auto rare_it = std::find_if(utt.begin(), utt.end(), [&](const std::string& w) {
            return counts[w] < config.threshold;
        });
        if (rare_it == utt.end()) continue;
        const std::size_t rare_index = static_cast<std::size_t>(rare_it - utt.begin());

        TrainingExample ex;
        ex.rare_word = *rare_it;
        std::vector<std::pair<int, int>> word_pieces;  // [first, last] piece index per word
        for (const std::string& w : utt) {
            Segmentation seg = segment_greedy(w, vocab);
            int first = static_cast<int>(ex.label_pieces.size());
            ex.label_pieces.insert(ex.label_pieces.end(), seg.piece_ids.begin(),
                                   seg.piece_ids.end());
            word_pieces.emplace_back(first, static_cast<int>(ex.label_pieces.size()) - 1);
        }
        const int total = static_cast<int>(ex.label_pieces.size());
        ex.features = Tensor::zeros({total * config.frames_per_piece, config.feature_dim});
        std::vector<double> base(static_cast<std::size_t>(config.feature_dim));
        for (int f = 0; f < ex.features.rows(); ++f) {
            piece_feature(ex.label_pieces[static_cast<std::size_t>(f / config.frames_per_piece)],
                          config.feature_dim, base.data());
            double* row = ex.features.row(f);
            for (int j = 0; j < config.feature_dim; ++j)
                row[j] = base[static_cast<std::size_t>(j)] + config.noise * jitter(rng);
        }
        auto [first_piece, last_piece] = word_pieces[rare_index];
        ex.rare_frames = {first_piece * config.frames_per_piece,
                          (last_piece + 1) * config.frames_per_piece - 1};

        std::vector<std::string> pool;
        for (const std::string& w : set.rare_vocab)
            if (w != ex.rare_word) pool.push_back(w);
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(std::min<std::size_t>(pool.size(), static_cast<std::size_t>(config.distractors)));
        ex.entities = std::move(pool);
        ex.entities.push_back(ex.rare_word);
        std::shuffle(ex.entities.begin(), ex.entities.end(), rng);
        set.examples.push_back(std::move(ex));
    }
    return set;
}

int scheduled_catalog_size(const TrainConfig& config, int epoch) {
    long long k = static_cast<long long>(config.catalog_start) +
                  static_cast<long long>(config.catalog_step) * epoch;
    return static_cast<int>(std::min<long long>(k, config.catalog_cap));
}

AdapterGradients adapter_loss_and_grad(const AdapterParams& params,
                                       const SyntheticEncoder& encoder, const Tensor& features,
                                       const std::vector<int>& labels,
                                       const std::vector<std::string>& entities,
                                       const SubwordVocab& vocab, double alpha,
                                       bool enforce_no_bias) {
    if (params.d != encoder.d) throw InvalidArgument("adapter/encoder dimension mismatch");
    if (params.phi.rows() != vocab.size() || encoder.vocab != vocab.size())
        throw InvalidArgument("vocabulary size mismatch");

    std::vector<Tensor> layers = encoder_forward(encoder, features);
    std::vector<int> tap_ids = encoder.default_taps();
    std::vector<const Tensor*> taps;
    for (int layer : tap_ids) taps.push_back(&layers[static_cast<std::size_t>(layer - 1)]);

    std::vector<EntityTrace> traces;
    CatalogCache cache = encode_catalog_impl(entities, params, vocab, &traces);
    BiasingTrace tr = biasing_forward_impl(taps, cache, params);

    const Tensor& top = layers.back();
    const int t_frames = top.rows();
    const int d = params.d;
    const int a = params.attn_dim;
    const int k_rows = cache.c_e.rows();
    const int h = d / 2;
    const double scale = 1.0 / std::sqrt(static_cast<double>(a));

    // frames whose attention argmax is the no-bias slot are masked: zero bias
    // in the forward sum and (below) a zeroed gradient row, matching the
    // inference-time enforcement as a stop-gradient
    std::vector<char> masked(static_cast<std::size_t>(t_frames), 0);
    if (enforce_no_bias) {
        for (int t = 0; t < t_frames; ++t) {
            std::size_t best = kernels::argmax(tr.attn.row(t), static_cast<std::size_t>(k_rows));
            if (static_cast<int>(best) == k_rows - 1) masked[static_cast<std::size_t>(t)] = 1;
        }
    }

    Tensor logits = Tensor::zeros({t_frames, encoder.vocab});
    for (int t = 0; t < t_frames; ++t) {
        std::vector<double> biased(static_cast<std::size_t>(d));
        if (masked[static_cast<std::size_t>(t)])
            std::copy(top.row(t), top.row(t) + d, biased.data());
        else
            kernels::add(top.row(t), tr.bias.row(t), biased.data(), static_cast<std::size_t>(d));
        matvec(encoder.out_w, biased.data(), logits.row(t));
        kernels::add(logits.row(t), encoder.out_b.data.data(), logits.row(t),
                     static_cast<std::size_t>(encoder.vocab));
    }

    AdapterGradients out;
    out.grads = zero_like(params);
    CtcLoss closs = ctc_loss(logits, labels);
    if (!closs.feasible) {
        out.loss = std::numeric_limits<double>::infinity();
        out.feasible = false;
        return out;
    }
    out.loss = alpha * closs.loss;

    // head is frozen: only the bias path propagates
    Tensor dbias = Tensor::zeros({t_frames, d});
    std::vector<double> dlog(static_cast<std::size_t>(encoder.vocab));
    for (int t = 0; t < t_frames; ++t) {
        if (masked[static_cast<std::size_t>(t)]) continue;
        for (int k = 0; k < encoder.vocab; ++k)
            dlog[static_cast<std::size_t>(k)] = alpha * closs.grad.at(t, k);
        matvec_t_acc(encoder.out_w, dlog.data(), dbias.row(t));
    }

    // attention backward
    Tensor dvals = Tensor::zeros({k_rows, d});
    Tensor dkeys = Tensor::zeros({k_rows, a});
    Tensor dce = Tensor::zeros({k_rows, d});
    Tensor dq = Tensor::zeros({t_frames, d});
    std::vector<double> da(static_cast<std::size_t>(k_rows));
    std::vector<double> ds(static_cast<std::size_t>(k_rows));
    std::vector<double> dqp(static_cast<std::size_t>(a));
    for (int t = 0; t < t_frames; ++t) {
        const double* arow = tr.attn.row(t);
        for (int j = 0; j < k_rows; ++j) {
            kernels::axpy(arow[j], dbias.row(t), dvals.row(j), static_cast<std::size_t>(d));
            da[static_cast<std::size_t>(j)] =
                kernels::dot(dbias.row(t), tr.vals.row(j), static_cast<std::size_t>(d));
        }
        double inner = kernels::dot(arow, da.data(), static_cast<std::size_t>(k_rows));
        for (int j = 0; j < k_rows; ++j)
            ds[static_cast<std::size_t>(j)] = arow[j] * (da[static_cast<std::size_t>(j)] - inner);
        std::fill(dqp.begin(), dqp.end(), 0.0);
        for (int j = 0; j < k_rows; ++j) {
            kernels::axpy(ds[static_cast<std::size_t>(j)] * scale, tr.keys.row(j), dqp.data(),
                          static_cast<std::size_t>(a));
            kernels::axpy(ds[static_cast<std::size_t>(j)] * scale, tr.qp.row(t), dkeys.row(j),
                          static_cast<std::size_t>(a));
        }
        outer_acc(out.grads.wq, dqp.data(), tr.q.row(t));
        matvec_t_acc(params.wq, dqp.data(), dq.row(t));
    }
    for (int j = 0; j < k_rows; ++j) {
        outer_acc(out.grads.wk, dkeys.row(j), cache.c_e.row(j));
        matvec_t_acc(params.wk, dkeys.row(j), dce.row(j));
        outer_acc(out.grads.wv, dvals.row(j), cache.c_e.row(j));
        matvec_t_acc(params.wv, dvals.row(j), dce.row(j));
    }
    for (std::size_t i = 0; i < taps.size(); ++i) {
        double acc = 0.0;
        for (int t = 0; t < t_frames; ++t)
            acc += kernels::dot(dq.row(t), taps[i]->row(t), static_cast<std::size_t>(d));
        out.grads.tap_w.data[i] += acc;
    }

    // catalog rows: last row is the no-bias embedding, the rest backprop
    // through the recurrent encoder into the piece embeddings
    kernels::add(out.grads.no_bias.data.data(), dce.row(k_rows - 1),
                 out.grads.no_bias.data.data(), static_cast<std::size_t>(d));
    for (std::size_t j = 0; j < traces.size(); ++j) {
        const EntityTrace& trace = traces[j];
        std::vector<double> dh_fw(dce.row(static_cast<int>(j)), dce.row(static_cast<int>(j)) + h);
        std::vector<double> dh_bw(dce.row(static_cast<int>(j)) + h,
                                  dce.row(static_cast<int>(j)) + d);
        std::vector<std::vector<double>> dx_fw, dx_bw;
        lstm_backward(params.lstm_fw_wih, params.lstm_fw_whh, trace.fw, dh_fw,
                      out.grads.lstm_fw_wih, out.grads.lstm_fw_whh, out.grads.lstm_fw_b, dx_fw);
        lstm_backward(params.lstm_bw_wih, params.lstm_bw_whh, trace.bw, dh_bw,
                      out.grads.lstm_bw_wih, out.grads.lstm_bw_whh, out.grads.lstm_bw_b, dx_bw);
        const std::size_t n = trace.pieces.size();
        for (std::size_t s = 0; s < n; ++s) {
            int piece = trace.pieces[s];
            kernels::add(out.grads.phi.row(piece), dx_fw[s].data(), out.grads.phi.row(piece),
                         static_cast<std::size_t>(d));
            // reversed input: step s of the backward direction read piece n-1-s
            int rev_piece = trace.pieces[n - 1 - s];
            kernels::add(out.grads.phi.row(rev_piece), dx_bw[s].data(),
                         out.grads.phi.row(rev_piece), static_cast<std::size_t>(d));
        }
    }
    return out;
}

TrainResult train_adapter(const SyntheticEncoder& encoder, const RareTrainingSet& data,
                          const SubwordVocab& vocab, const TrainConfig& config) {
    if (config.alpha < 0.0 || config.alpha > 1.0 || config.beta < 0.0 || config.beta > 1.0)
        throw InvalidArgument("loss weights must lie in [0, 1]");
    if (config.learning_rate < 0.0) throw InvalidArgument("negative learning rate");
    if (config.epochs < 0) throw InvalidArgument("negative epoch count");
    if (config.catalog_start < 1 || config.catalog_step < 0 || config.catalog_cap < config.catalog_start)
        throw InvalidArgument("bad catalog size schedule");

    TrainResult result;
    // parameters come from init_adapter(vocab, d, d, taps, config.seed), so a
    // zero-rate run returns exactly that initialization
    result.params = init_adapter(vocab.size(), encoder.d, encoder.d,
                                 static_cast<int>(encoder.default_taps().size()), config.seed);
    std::mt19937_64 rng(splitmix64(config.seed));

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const int k = scheduled_catalog_size(config, epoch);
        double total = 0.0;
        int counted = 0;
        for (std::size_t ei = 0; ei < data.examples.size(); ++ei) {
            const TrainingExample& ex = data.examples[ei];
            std::vector<std::string> pool;
            for (const std::string& w : data.rare_vocab)
                if (w != ex.rare_word) pool.push_back(w);
            std::shuffle(pool.begin(), pool.end(), rng);
            pool.resize(std::min<std::size_t>(pool.size(), static_cast<std::size_t>(k - 1)));
            std::vector<std::string> entities = std::move(pool);
            entities.push_back(ex.rare_word);
            std::shuffle(entities.begin(), entities.end(), rng);

            AdapterGradients step = adapter_loss_and_grad(result.params, encoder, ex.features,
                                                          ex.label_pieces, entities, vocab,
                                                          config.alpha, config.enforce_no_bias);
            if (!step.feasible) continue;
            if (std::isnan(step.loss)) {
                std::ostringstream msg;
                msg << "training diverged: loss is NaN at epoch " << epoch << ", example " << ei;
                throw TrainingDiverged(msg.str());
            }
            total += step.loss;
            ++counted;
            auto targets = result.params.tensors();
            auto grads = step.grads.tensors();
            double step_scale = -config.learning_rate;
            if (config.clip_norm > 0.0) {
                double sq = 0.0;
                for (auto& [name, g] : grads) {
                    (void)name;
                    sq += kernels::sumsq(g->data.data(), g->size());
                }
                double norm = std::sqrt(sq);
                if (norm > config.clip_norm) step_scale *= config.clip_norm / norm;
            }
            const double keep = 1.0 - config.learning_rate * config.weight_decay;
            for (std::size_t i = 0; i < targets.size(); ++i) {
                Tensor& param = *targets[i].second;
                if (config.weight_decay > 0.0)
                    for (double& x : param.data) x *= keep;
                kernels::axpy(step_scale, grads[i].second->data.data(), param.data.data(),
                              param.size());
            }
        }
        result.epoch_loss.push_back(counted > 0 ? total / counted : 0.0);
    }
    return result;
}

double entity_attention_rate(const AdapterParams& params, const SyntheticEncoder& encoder,
                             const std::vector<TrainingExample>& examples,
                             const SubwordVocab& vocab) {
    long long hits = 0;
    long long total = 0;
    for (const TrainingExample& ex : examples) {
        auto it = std::find(ex.entities.begin(), ex.entities.end(), ex.rare_word);
        if (it == ex.entities.end() || ex.rare_frames.first < 0) continue;
        const int row = static_cast<int>(it - ex.entities.begin());
        std::vector<Tensor> layers = encoder_forward(encoder, ex.features);
        std::vector<Tensor> taps;
        for (int layer : encoder.default_taps())
            taps.push_back(layers[static_cast<std::size_t>(layer - 1)]);
        CatalogCache cache = encode_catalog(ex.entities, params, vocab);
        BiasingResult fwd = biasing_forward(taps, cache, params, false);
        const int nb_row = fwd.attention.cols() - 1;
        for (int t = ex.rare_frames.first; t <= ex.rare_frames.second; ++t) {
            ++total;
            if (fwd.attention.at(t, row) > fwd.attention.at(t, nb_row)) ++hits;
        }
    }
    return total > 0 ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

namespace {

constexpr char kAdapterMagic[4] = {'A', 'D', 'P', 'T'};
constexpr std::uint32_t kAdapterVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw LoadError(LoadError::Code::Truncated, "adapter checkpoint truncated");
    return v;
}

}  // namespace

void save_adapter(const std::string& path, const AdapterParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError(LoadError::Code::OpenFailed, "cannot write " + path);
    out.write(kAdapterMagic, sizeof(kAdapterMagic));
    write_u32(out, kAdapterVersion);
    auto tensors = params.tensors();
    write_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(tensor->shape.size()));
        for (int dim : tensor->shape) write_u32(out, static_cast<std::uint32_t>(dim));
        for (double v : tensor->data) {
            float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), sizeof(f));
        }
    }
    if (!out) throw LoadError(LoadError::Code::OpenFailed, "short write to " + path);
}

AdapterParams load_adapter(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError(LoadError::Code::OpenFailed, "cannot open " + path);
    char magic[4];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kAdapterMagic, sizeof(magic)) != 0)
        throw LoadError(LoadError::Code::BadMagic, "not an adapter checkpoint: " + path);
    std::uint32_t version = read_u32(in);
    if (version != kAdapterVersion)
        throw LoadError(LoadError::Code::BadVersion,
                        "unsupported checkpoint version " + std::to_string(version));
    std::uint32_t count = read_u32(in);

    std::map<std::string, Tensor> loaded;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = read_u32(in);
        if (name_len > 256)
            throw LoadError(LoadError::Code::BadValue, "implausible tensor name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t rank = read_u32(in);
        if (rank > 4) throw LoadError(LoadError::Code::BadValue, "implausible tensor rank");
        std::vector<int> shape;
        std::size_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            std::uint32_t dim = read_u32(in);
            if (dim > (1u << 24)) throw LoadError(LoadError::Code::BadValue, "implausible dim");
            shape.push_back(static_cast<int>(dim));
            n *= dim;
        }
        Tensor t = Tensor::zeros(std::move(shape));
        for (std::size_t j = 0; j < n; ++j) {
            float f = 0.0f;
            in.read(reinterpret_cast<char*>(&f), sizeof(f));
            if (!in) throw LoadError(LoadError::Code::Truncated, "adapter checkpoint truncated");
            if (!std::isfinite(f))
                throw LoadError(LoadError::Code::BadValue, "non-finite value in " + name);
            t.data[j] = static_cast<double>(f);
        }
        loaded.emplace(std::move(name), std::move(t));
    }
    if (in.peek() != std::ifstream::traits_type::eof())
        throw LoadError(LoadError::Code::SizeMismatch, "trailing bytes in " + path);

    AdapterParams params;
    for (auto& [name, tensor] : params.tensors()) {
        auto it = loaded.find(name);
        if (it == loaded.end())
            throw LoadError(LoadError::Code::SizeMismatch, "checkpoint missing tensor " + name);
        *tensor = std::move(it->second);
    }
    params.d = params.no_bias.rows();
    params.attn_dim = params.wq.rows();
    const int h = params.d / 2;
    if (params.d <= 0 || params.d % 2 != 0 || params.phi.cols() != params.d ||
        params.lstm_fw_wih.rows() != 4 * h || params.lstm_fw_wih.cols() != params.d ||
        params.lstm_fw_whh.cols() != h || params.lstm_bw_wih.rows() != 4 * h ||
        params.wq.cols() != params.d || params.wk.rows() != params.attn_dim ||
        params.wk.cols() != params.d || params.wv.rows() != params.d ||
        params.wv.cols() != params.d)
        throw LoadError(LoadError::Code::SizeMismatch, "inconsistent tensor shapes in " + path);
    return params;
}

}  // namespace ctcbias
