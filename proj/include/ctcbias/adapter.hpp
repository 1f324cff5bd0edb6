#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ctcbias/types.hpp"

namespace ctcbias {

// Dense row-major tensor. Adapter math runs in double so analytic gradients
// can be validated against central finite differences; checkpoints store the
// values as 32-bit floats.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    static Tensor zeros(std::vector<int> shape);

    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    std::size_t size() const { return data.size(); }

    double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols() + j]; }
    double* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols(); }
    const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * cols(); }
};

// Trainable state of the contextual adapter. The catalog side embeds entity
// piece sequences (phi) and runs them through a single bidirectional
// recurrent layer (hidden d/2 per direction, final states concatenated); the
// biasing side mixes encoder taps into a query and attends over the catalog
// rows with single-head scaled-dot attention.
struct AdapterParams {
    int d = 128;         // catalog embedding / encoder / bias dimension
    int attn_dim = 128;  // projection dimension of the attention

    Tensor phi;          // [V, d] piece embedding table
    Tensor lstm_fw_wih;  // [4h, d] with h = d/2, gate order i,f,g,o
    Tensor lstm_fw_whh;  // [4h, h]
    Tensor lstm_fw_b;    // [4h]
    Tensor lstm_bw_wih;  // same shapes, reverse direction
    Tensor lstm_bw_whh;
    Tensor lstm_bw_b;
    Tensor no_bias;      // [d] embedding of the no-bias catalog row
    Tensor tap_w;        // [taps] query mixing weights over the encoder taps
    Tensor wq;           // [attn_dim, d]
    Tensor wk;           // [attn_dim, d]
    Tensor wv;           // [d, d]

    // Uniform iteration for the optimizer, finite differences, and IO.
    std::vector<std::pair<std::string, Tensor*>> tensors();
    std::vector<std::pair<std::string, const Tensor*>> tensors() const;
};

// Seeded initialization; d must be even. Weights draw from uniform(-0.1,
// 0.1) except the piece embeddings, which start wider (+/-0.5) so catalog
// encodings are separated from the first step, and the tap weights, which
// start at the exact mean-pool mix 1/taps.
AdapterParams init_adapter(int vocab_size, int d, int attn_dim, int taps, std::uint64_t seed);

// Entity embeddings, one row per catalog entry plus the no-bias row last.
struct CatalogCache {
    Tensor c_e;  // [K, d]; row K-1 equals the no-bias vector exactly
    std::uint64_t source_hash = 0;
};

std::uint64_t catalog_hash(const std::vector<std::string>& entities);

// Embeds every entity and appends the no-bias row. Throws InvalidArgument
// when an entity cannot be segmented with the vocabulary.
CatalogCache encode_catalog(const std::vector<std::string>& entities,
                            const AdapterParams& params, const SubwordVocab& vocab);

// Rebuilds the cache only when the catalog actually changes; builds() counts
// how often the encoder ran, so reuse is observable.
class CachedCatalogEncoder {
  public:
    const CatalogCache& get(const std::vector<std::string>& entities,
                            const AdapterParams& params, const SubwordVocab& vocab);
    int builds() const { return builds_; }

  private:
    std::optional<CatalogCache> cache_;
    int builds_ = 0;
};

// Frozen stand-in for the acoustic encoder: a stack of seeded random linear
// maps (orthonormal columns, so signal scale is preserved through the stack)
// produces one d-dimensional output per layer per frame, and a fixed head
// projects the (biased) top layer to piece logits. Never trained.
//
// The head models a base system that already recognizes the regular piece
// inventory: for pieces not listed in weak_pieces it decodes the matching
// piece-feature direction; for weak pieces the row is random, so the base
// system is uninformative on them and leans on its blank bias instead. That
// competence gap is what adapter training learns to fill.
struct SyntheticEncoder {
    int layers = 0;
    int input_dim = 0;
    int d = 0;
    int vocab = 0;
    std::vector<Tensor> layer_w;  // layer i: [d, prev_dim]
    std::vector<Tensor> layer_b;  // [d], zero by construction
    Tensor out_w;                 // [vocab, d]
    Tensor out_b;                 // [vocab], blank bias only

    // 1-based tap layers {ceil(0.3 N), ceil(0.6 N), N}, deduplicated.
    std::vector<int> default_taps() const;
};

SyntheticEncoder make_synthetic_encoder(int layers, int input_dim, int d, int vocab,
                                        std::uint64_t seed,
                                        const std::vector<int>& weak_pieces = {});

// features [T, input_dim] -> one [T, d] matrix per layer.
std::vector<Tensor> encoder_forward(const SyntheticEncoder& encoder, const Tensor& features);

struct BiasingResult {
    Tensor bias;       // [T, d]
    Tensor attention;  // [T, K] softmax rows
};

// q_t = sum_i tap_w[i] * tap_outputs[i][t]; scaled-dot attention over the
// catalog rows; bias is the attention-weighted value sum. With
// enforce_no_bias, frames whose largest attention weight sits on the no-bias
// row get an exactly-zero bias vector.
BiasingResult biasing_forward(const std::vector<Tensor>& tap_outputs, const CatalogCache& cache,
                              const AdapterParams& params, bool enforce_no_bias);

// Elementwise top-layer + bias.
Tensor apply_bias(const Tensor& e_top, const Tensor& bias);

struct CtcLoss {
    double loss = 0.0;  // -ln P(labels | softmax(logits)); +inf when infeasible
    Tensor grad;        // dloss/dlogits, all zero when infeasible
    bool feasible = true;
};

// Forward-backward CTC over [T, V] raw logits (softmax applied internally).
// The blank is the last class, matching the emission-file convention.
CtcLoss ctc_loss(const Tensor& logits, const std::vector<int>& labels);

// One synthetic utterance. Features are piece-identity directions plus
// noise, so the frozen encoder's outputs carry which piece is being spoken.
struct TrainingExample {
    Tensor features;                     // [T, feature_dim]
    std::vector<int> label_pieces;       // tokenized transcript
    std::vector<std::string> entities;   // rare word + distractors, shuffled
    std::string rare_word;
    std::pair<int, int> rare_frames{-1, -1};  // inclusive frame span of the rare word
};

struct RareTrainingSet {
    std::vector<TrainingExample> examples;
    std::vector<std::string> rare_vocab;  // sorted corpus words under the threshold
};

struct RareSetConfig {
    int threshold = 13;    // corpus count below which a word is rare
    int distractors = 3;   // extra catalog entries drawn per utterance
    int frames_per_piece = 2;
    int feature_dim = 16;
    double noise = 0.05;   // stddev of the per-frame feature jitter
    std::uint64_t seed = 1;
};

// Deterministic unit-scale feature direction for a piece id, shared by every
// dataset so train and held-out splits describe pieces the same way.
void piece_feature(int piece_id, int feature_dim, double* out);

// Builds one example per utterance that contains a rare word: synthesized
// features, piece labels, and an entity list of that word plus seeded
// distractors from the rare vocabulary.
RareTrainingSet make_rare_training_set(const std::vector<std::vector<std::string>>& transcripts,
                                       const SubwordVocab& vocab, const RareSetConfig& config);

struct TrainConfig {
    // Weight of the CTC term. The companion sequence-decoder term of the
    // multi-task objective is a zero placeholder at this scale, so the
    // effective loss is alpha * ctc.
    double alpha = 1.0;
    double beta = 0.0;  // phone-alignment term weight; unused here
    double learning_rate = 0.05;
    int epochs = 20;
    int catalog_start = 30;  // per-utterance catalog size schedule
    int catalog_step = 4;    // growth per epoch
    int catalog_cap = 250;
    int threshold = 13;
    // Per-example global gradient-norm clip; 0 disables. Attention sharpens
    // abruptly once query/key alignment clicks, and the unclipped steps right
    // after that transition are what blow training up.
    double clip_norm = 5.0;
    // Decoupled L2 decay per step; 0 disables. Without it long runs slowly
    // inflate the value vectors, letting ever-flatter attention deliver the
    // same bias and eroding the learned selectivity.
    double weight_decay = 0.0;
    // Apply the inference-time no-bias masking while training: frames whose
    // attention argmax lands on the no-bias slot get a zeroed bias and no
    // gradient. Off by default — masked frames stop learning entirely, which
    // can freeze training if the mask saturates early.
    bool enforce_no_bias = false;
    std::uint64_t seed = 1;
};

// start + step * epoch, clamped to cap.
int scheduled_catalog_size(const TrainConfig& config, int epoch);

class TrainingDiverged : public std::runtime_error {
  public:
    explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

struct AdapterGradients {
    AdapterParams grads;  // same tensor shapes as the parameters
    double loss = 0.0;
    bool feasible = true;
};

// Full forward and analytic backward pass for one utterance at a given
// catalog: encoder taps (frozen), catalog encoding, biasing attention, bias
// into the top layer, head logits, CTC. Used by the training loop and gated
// by the finite-difference tests.
// With enforce_no_bias the masking acts as a stop-gradient: masked frames
// contribute their unbiased CTC loss but no adapter gradient.
AdapterGradients adapter_loss_and_grad(const AdapterParams& params,
                                       const SyntheticEncoder& encoder, const Tensor& features,
                                       const std::vector<int>& labels,
                                       const std::vector<std::string>& entities,
                                       const SubwordVocab& vocab, double alpha,
                                       bool enforce_no_bias = false);

struct TrainResult {
    AdapterParams params;
    std::vector<double> epoch_loss;  // mean feasible-example loss per epoch
};

// Plain SGD on the adapter parameters only; the encoder is read-only.
// Distractor catalogs are redrawn each epoch following the size schedule.
// Throws TrainingDiverged when a loss turns NaN.
TrainResult train_adapter(const SyntheticEncoder& encoder, const RareTrainingSet& data,
                          const SubwordVocab& vocab, const TrainConfig& config);

// Fraction of rare-word frames where the true entity's attention weight
// exceeds the no-bias weight, over the examples' own entity lists.
double entity_attention_rate(const AdapterParams& params, const SyntheticEncoder& encoder,
                             const std::vector<TrainingExample>& examples,
                             const SubwordVocab& vocab);

// Versioned binary checkpoint: magic "ADPT", u32 version, u32 tensor count,
// then per tensor a u32-length name, u32 rank, u32 dims, f32 LE values.
void save_adapter(const std::string& path, const AdapterParams& params);
AdapterParams load_adapter(const std::string& path);

}  // namespace ctcbias
