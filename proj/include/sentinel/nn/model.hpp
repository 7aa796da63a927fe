#pragma once

// Small pre-norm transformer encoder over PL-1 token sequences.
//
//   x0 = tok_emb[id] + pos_emb[pos]
//   per layer l:
//     a = LN(x; ln1)      x += Attn(a) Wo          (heads split the d_model columns)
//     b = LN(x; ln2)      x += GELU(b W1 + b1) W2 + b2
//   z = LN(x; final_ln)
//   class logits = z[CLS] Wc + bc         token logits = z Wm + bm
//
// Attention scores are (q k^T) / sqrt(d_head); pad keys get weight exactly 0.
// LayerNorm uses the population variance and eps = 1e-10. GELU is the tanh
// form 0.5 u (1 + tanh(sqrt(2/pi) (u + 0.044715 u^3))).
//
// Parameters are 64-bit, row-major, named:
//   tok_emb [V x d]   pos_emb [max_len x d]
//   layer{i}.ln1.gain/.bias [1 x d]   layer{i}.attn.wq/.wk/.wv/.wo [d x d]
//   layer{i}.ln2.gain/.bias [1 x d]   layer{i}.ffn.w1 [d x d_ff]  .b1 [1 x d_ff]
//   layer{i}.ffn.w2 [d_ff x d]        layer{i}.ffn.b2 [1 x d]
//   final_ln.gain/.bias [1 x d]   mlm.w [d x V]  mlm.b [1 x V]   cls.w [d x C]  cls.b [1 x C]
//
// Initialization: every weight matrix and both embeddings uniform in
// [-1/sqrt(d), 1/sqrt(d)], drawn in the order above; biases 0, gains 1.

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sentinel/lang.hpp"
#include "sentinel/rng.hpp"
#include "sentinel/threat_class.hpp"

namespace sentinel::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

inline constexpr double kLayerNormEps = 1e-10;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_len = kSeqLen;
  std::size_t n_classes = kClassCount;
  double dropout = 0.0;

  std::size_t d_head() const { return d_model / n_heads; }
  bool operator==(const ModelConfig&) const = default;
};

// Throws InvalidConfig.
void validate(const ModelConfig& config);
ModelConfig default_model_config(const Vocab& vocab);

// Ordered set of named arrays. Also used for gradients and Adam moments.
class ParamBundle {
 public:
  void add(std::string name, Mat value);
  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Mat& value(std::size_t i) { return values_[i]; }
  const Mat& value(std::size_t i) const { return values_[i]; }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index(const std::string& name) const;
  Mat& operator[](const std::string& name) { return values_[index(name)]; }
  const Mat& operator[](const std::string& name) const { return values_[index(name)]; }
  const std::vector<std::string>& names() const { return names_; }

  ParamBundle zeros_like() const;
  bool all_finite() const;
  std::size_t scalar_count() const;
  bool operator==(const ParamBundle& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Model {
  ModelConfig config;
  ParamBundle params;
};

// Empty bundle with every array shaped by config, all zeros.
ParamBundle zero_params(const ModelConfig& config);
Model init_model(const ModelConfig& config, std::uint64_t seed);
// Throws ShapeMismatch when params do not fit config.
void check_shapes(const Model& model);

// Sequences of a common length; ids row-major [size x len].
struct Batch {
  std::size_t size = 0;
  std::size_t len = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;

  TokenId id(std::size_t s, std::size_t t) const { return ids[s * len + t]; }
  bool key(std::size_t s, std::size_t t) const { return mask[s * len + t] != 0; }

  static Batch from(std::span<const TokenSeq> seqs);
  static Batch from(std::span<const TokenSeq> seqs, std::span<const std::size_t> order);
  // Explicit ids; mask is id != [PAD].
  static Batch from_ids(const std::vector<std::vector<TokenId>>& rows, std::size_t len);
  Batch slice(std::size_t first, std::size_t count) const;
};

struct ForwardResult {
  Mat hidden;        // [size*len x d], after the final layer norm
  Mat class_logits;  // [size x C]
  Mat token_logits;  // [size*len x V], empty unless requested
};

// Throws IdOutOfRange or ShapeMismatch.
ForwardResult forward(const Model& model, const Batch& batch, bool token_logits = true);

// Attention weights of one layer, one head, one sequence [len x len].
Mat attention_weights(const Model& model, const Batch& batch, std::size_t layer,
                      std::size_t head, std::size_t seq);

// Masked positions of one batch. Targets are the original ids.
struct MaskedToken {
  std::size_t seq = 0;
  std::size_t pos = 0;
  TokenId target = 0;
};

struct MaskPlan {
  Batch input;  // ids after replacement
  std::vector<MaskedToken> tokens;
};

// Per sequence: k = max(1, round(0.15 n)) of the n non-special positions are
// chosen without replacement; each becomes [MASK] with prob 0.8, a uniform
// random non-special id with prob 0.1, and stays as is with prob 0.1.
MaskPlan make_mask_plan(const Batch& batch, std::size_t vocab_size, Rng& rng);

struct LossValue {
  double loss = 0;       // mean cross-entropy
  std::size_t count = 0;  // terms in the mean
  std::size_t correct = 0;  // argmax hits
};

LossValue mlm_loss(const Model& model, const MaskPlan& plan);
LossValue cls_loss(const Model& model, const Batch& batch, std::span<const ThreatClass> labels);

// Names accepted by a freeze plan: any array name, the groups "embeddings"
// (tok_emb, pos_emb), "layer<i>", "final_ln", "mlm", "cls", and "all".
// Returns one flag per array. Throws UnknownFreezeTarget.
std::vector<bool> resolve_freeze(const ParamBundle& params, std::span<const std::string> plan);

struct Gradients {
  LossValue value;
  ParamBundle grads;  // d(mean loss)/d(param); zero for frozen arrays
};

// Work is split into chunks of kGradChunk sequences that may run on worker
// threads; chunk results are summed in chunk order, so the result does not
// depend on the thread count.
inline constexpr std::size_t kGradChunk = 16;

Gradients backward_mlm(const Model& model, const MaskPlan& plan, const std::vector<bool>& frozen,
                       std::size_t threads = 1, std::uint64_t dropout_seed = 0);
Gradients backward_cls(const Model& model, const Batch& batch, std::span<const ThreatClass> labels,
                       const std::vector<bool>& frozen, std::size_t threads = 1,
                       std::uint64_t dropout_seed = 0);

struct ThreatVerdict {
  ThreatClass cls = ThreatClass::Benign;
  std::array<double, kClassCount> probs{};
  double threat_level = 0;  // 1 - P(benign)
};

ThreatVerdict verdict_from_logits(const RowVec& logits);
ThreatVerdict predict(const Model& model, const TokenSeq& seq);
std::vector<ThreatVerdict> predict_all(const Model& model, std::span<const TokenSeq> seqs,
                                       std::size_t threads = 1);

// Worker count from SENTINEL_THREADS, else hardware concurrency (at least 1).
std::size_t default_threads();

}  // namespace sentinel::nn
