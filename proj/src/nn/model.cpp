#include "sentinel/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <limits>
#include <thread>

#include "sentinel/error.hpp"

namespace sentinel::nn {

namespace {

constexpr std::size_t kPerLayer = 12;

// Index of every array inside the canonical ParamBundle order.
struct Layout {
  struct LayerIdx {
    std::size_t ln1g, ln1b, wq, wk, wv, wo, ln2g, ln2b, w1, b1, w2, b2;
  };
  std::size_t tok = 0, pos = 1;
  std::vector<LayerIdx> layers;
  std::size_t lnf_g, lnf_b, mlm_w, mlm_b, cls_w, cls_b;

  explicit Layout(std::size_t n_layers) {
    std::size_t i = 2;
    for (std::size_t l = 0; l < n_layers; ++l) {
      layers.push_back({i, i + 1, i + 2, i + 3, i + 4, i + 5, i + 6, i + 7, i + 8, i + 9, i + 10, i + 11});
      i += kPerLayer;
    }
    lnf_g = i;
    lnf_b = i + 1;
    mlm_w = i + 2;
    mlm_b = i + 3;
    cls_w = i + 4;
    cls_b = i + 5;
  }
};

struct LnCache {
  Mat xhat;
  Eigen::VectorXd rstd;
};

Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, LnCache& cache) {
  const auto n = static_cast<double>(x.cols());
  Eigen::VectorXd mean = x.rowwise().sum() / n;
  cache.xhat = x.colwise() - mean;
  Eigen::VectorXd var = cache.xhat.rowwise().squaredNorm() / n;
  cache.rstd = (var.array() + kLayerNormEps).rsqrt();
  cache.xhat = cache.rstd.asDiagonal() * cache.xhat;
  Mat y = cache.xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

// dy -> dx; accumulates gain and bias gradients.
Mat layer_norm_back(const Mat& dy, const Mat& gain, const LnCache& cache, Mat& dgain, Mat& dbias) {
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const auto n = static_cast<double>(dy.cols());
  Mat dxhat = dy.array().rowwise() * gain.row(0).array();
  Eigen::VectorXd mean_d = dxhat.rowwise().sum() / n;
  Eigen::VectorXd mean_dx = (dxhat.array() * cache.xhat.array()).rowwise().sum().matrix() / n;
  Mat dx = dxhat.colwise() - mean_d;
  dx -= (cache.xhat.array().colwise() * mean_dx.array()).matrix();
  return cache.rstd.asDiagonal() * dx;
}

constexpr double kGeluC = 0.79788456080286535588;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

Mat gelu(const Mat& u) {
  return u.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); });
}

Mat gelu_grad(const Mat& u) {
  return u.unaryExpr([](double x) {
    const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  });
}

// Row softmax over key columns only; other columns end exactly 0. (Eigen's
// vectorized exp clamps -inf to a denormal, so pads are zeroed by hand.)
void masked_softmax_rows(Mat& s, const std::vector<bool>& keys) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (keys[static_cast<std::size_t>(j)]) m = std::max(m, row(j));
    }
    row = (row.array() - m).exp();
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (!keys[static_cast<std::size_t>(j)]) row(j) = 0.0;
    }
    row /= row.sum();
  }
}

struct LayerTape {
  LnCache ln1;
  Mat a, q, k, v;
  std::vector<Mat> probs;  // [seq * heads + head]
  Mat ctx;
  Mat drop1;
  LnCache ln2;
  Mat b, u, g;
  Mat drop2;
};

struct Tape {
  std::vector<LayerTape> layers;
  LnCache lnf;
  Mat z;
};

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Mat m(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.unit() < p ? 0.0 : keep;
  return m;
}

void check_batch(const Model& model, const Batch& batch) {
  const auto& c = model.config;
  if (batch.len == 0 || batch.len > c.max_len) {
    throw Error(ErrorCode::ShapeMismatch, "batch length " + std::to_string(batch.len) +
                                              " outside 1.." + std::to_string(c.max_len));
  }
  if (batch.ids.size() != batch.size * batch.len || batch.mask.size() != batch.ids.size()) {
    throw Error(ErrorCode::ShapeMismatch, "batch arrays do not match size x len");
  }
  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    if (batch.ids[i] >= c.vocab_size) {
      throw Error(ErrorCode::IdOutOfRange, "token id " + std::to_string(batch.ids[i]) +
                                               " >= vocab size " + std::to_string(c.vocab_size));
    }
    if ((batch.mask[i] != 0) != (batch.ids[i] != special::kPad)) {
      throw Error(ErrorCode::ShapeMismatch, "attention mask disagrees with [PAD] positions");
    }
  }
  for (std::size_t s = 0; s < batch.size; ++s) {
    if (!batch.key(s, 0)) throw Error(ErrorCode::ShapeMismatch, "sequence starts with [PAD]");
  }
}

// Runs the encoder, recording what backward needs. dropout_rng may be null.
void encode(const Model& model, const Batch& batch, Tape& tape, Rng* dropout_rng) {
  const auto& c = model.config;
  const auto& p = model.params;
  const Layout lay(c.n_layers);
  const std::size_t T = batch.len;
  const std::size_t BT = batch.size * T;
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto dh = static_cast<Eigen::Index>(c.d_head());
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.d_head()));
  const bool drop = dropout_rng != nullptr && c.dropout > 0;

  Mat x(BT, d);
  const Mat& tok = p.value(lay.tok);
  const Mat& pos = p.value(lay.pos);
  for (std::size_t r = 0; r < BT; ++r) x.row(r) = tok.row(batch.ids[r]) + pos.row(r % T);

  tape.layers.resize(c.n_layers);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& L = lay.layers[l];
    LayerTape& lt = tape.layers[l];
    lt.a = layer_norm(x, p.value(L.ln1g), p.value(L.ln1b), lt.ln1);
    lt.q.noalias() = lt.a * p.value(L.wq);
    lt.k.noalias() = lt.a * p.value(L.wk);
    lt.v.noalias() = lt.a * p.value(L.wv);
    lt.ctx.resize(BT, d);
    lt.probs.resize(batch.size * c.n_heads);
    std::vector<bool> keys(T);
    for (std::size_t s = 0; s < batch.size; ++s) {
      const auto r0 = static_cast<Eigen::Index>(s * T);
      for (std::size_t j = 0; j < T; ++j) keys[j] = batch.key(s, j);
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h) * dh;
        Mat scores = lt.q.block(r0, c0, T, dh) * lt.k.block(r0, c0, T, dh).transpose() * scale;
        masked_softmax_rows(scores, keys);
        lt.ctx.block(r0, c0, T, dh).noalias() = scores * lt.v.block(r0, c0, T, dh);
        lt.probs[s * c.n_heads + h] = std::move(scores);
      }
    }
    Mat attn_out = lt.ctx * p.value(L.wo);
    if (drop) {
      lt.drop1 = dropout_mask(attn_out.rows(), attn_out.cols(), c.dropout, *dropout_rng);
      attn_out.array() *= lt.drop1.array();
    }
    x += attn_out;
    lt.b = layer_norm(x, p.value(L.ln2g), p.value(L.ln2b), lt.ln2);
    lt.u.noalias() = lt.b * p.value(L.w1);
    lt.u.rowwise() += p.value(L.b1).row(0);
    lt.g = gelu(lt.u);
    Mat ffn_out = lt.g * p.value(L.w2);
    ffn_out.rowwise() += p.value(L.b2).row(0);
    if (drop) {
      lt.drop2 = dropout_mask(ffn_out.rows(), ffn_out.cols(), c.dropout, *dropout_rng);
      ffn_out.array() *= lt.drop2.array();
    }
    x += ffn_out;
  }
  tape.z = layer_norm(x, p.value(lay.lnf_g), p.value(lay.lnf_b), tape.lnf);
}

// Backpropagates dz through the encoder into grads. Stops below the lowest
// layer that still has trainable arrays underneath.
void encode_back(const Model& model, const Batch& batch, const Tape& tape, const Mat& dz,
                 const std::vector<bool>& frozen, ParamBundle& grads) {
  const auto& c = model.config;
  const auto& p = model.params;
  const Layout lay(c.n_layers);
  const std::size_t T = batch.len;
  const auto dh = static_cast<Eigen::Index>(c.d_head());
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.d_head()));

  // needed_below[l]: some array in layers < l or the embeddings is trainable.
  std::vector<bool> needed_below(c.n_layers + 1, false);
  bool any = !frozen[lay.tok] || !frozen[lay.pos];
  for (std::size_t l = 0; l <= c.n_layers; ++l) {
    needed_below[l] = any;
    if (l < c.n_layers) {
      for (std::size_t i = 0; i < kPerLayer; ++i) any = any || !frozen[lay.layers[l].ln1g + i];
    }
  }

  Mat dx = layer_norm_back(dz, p.value(lay.lnf_g), tape.lnf, grads.value(lay.lnf_g), grads.value(lay.lnf_b));
  for (std::size_t l = c.n_layers; l-- > 0;) {
    if (!needed_below[l + 1]) return;
    const auto& L = lay.layers[l];
    const LayerTape& lt = tape.layers[l];

    // FFN branch.
    Mat df = dx;
    if (lt.drop2.size() > 0) df.array() *= lt.drop2.array();
    grads.value(L.b2).row(0) += df.colwise().sum();
    grads.value(L.w2).noalias() += lt.g.transpose() * df;
    Mat du = (df * p.value(L.w2).transpose()).array() * gelu_grad(lt.u).array();
    grads.value(L.b1).row(0) += du.colwise().sum();
    grads.value(L.w1).noalias() += lt.b.transpose() * du;
    Mat db = du * p.value(L.w1).transpose();
    dx += layer_norm_back(db, p.value(L.ln2g), lt.ln2, grads.value(L.ln2g), grads.value(L.ln2b));

    // Attention branch.
    Mat dao = dx;
    if (lt.drop1.size() > 0) dao.array() *= lt.drop1.array();
    grads.value(L.wo).noalias() += lt.ctx.transpose() * dao;
    Mat dctx = dao * p.value(L.wo).transpose();
    Mat dq = Mat::Zero(lt.q.rows(), lt.q.cols());
    Mat dk = Mat::Zero(lt.k.rows(), lt.k.cols());
    Mat dv = Mat::Zero(lt.v.rows(), lt.v.cols());
    for (std::size_t s = 0; s < batch.size; ++s) {
      const auto r0 = static_cast<Eigen::Index>(s * T);
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h) * dh;
        const Mat& P = lt.probs[s * c.n_heads + h];
        auto dO = dctx.block(r0, c0, T, dh);
        dv.block(r0, c0, T, dh).noalias() = P.transpose() * dO;
        Mat dP = dO * lt.v.block(r0, c0, T, dh).transpose();
        Eigen::VectorXd rowdot = (dP.array() * P.array()).rowwise().sum();
        Mat dS = P.array() * (dP.colwise() - rowdot).array();
        dq.block(r0, c0, T, dh).noalias() = dS * lt.k.block(r0, c0, T, dh) * scale;
        dk.block(r0, c0, T, dh).noalias() = dS.transpose() * lt.q.block(r0, c0, T, dh) * scale;
      }
    }
    grads.value(L.wq).noalias() += lt.a.transpose() * dq;
    grads.value(L.wk).noalias() += lt.a.transpose() * dk;
    grads.value(L.wv).noalias() += lt.a.transpose() * dv;
    Mat da = dq * p.value(L.wq).transpose();
    da.noalias() += dk * p.value(L.wk).transpose();
    da.noalias() += dv * p.value(L.wv).transpose();
    dx += layer_norm_back(da, p.value(L.ln1g), lt.ln1, grads.value(L.ln1g), grads.value(L.ln1b));
  }
  if (!needed_below[0]) return;
  Mat& gtok = grads.value(lay.tok);
  Mat& gpos = grads.value(lay.pos);
  for (std::size_t r = 0; r < static_cast<std::size_t>(dx.rows()); ++r) {
    gtok.row(batch.ids[r]) += dx.row(static_cast<Eigen::Index>(r));
    gpos.row(static_cast<Eigen::Index>(r % T)) += dx.row(static_cast<Eigen::Index>(r));
  }
}

// Softmax cross-entropy summed over rows; replaces logits by d(sum)/d(logits).
void cross_entropy(Mat& logits, std::span<const std::size_t> targets, double& loss_sum,
                   std::size_t& correct) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    Eigen::Index arg = 0;
    const double m = row.maxCoeff(&arg);
    const auto t = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(r)]);
    if (arg == t) ++correct;
    row = (row.array() - m).exp();
    const double sum = row.sum();
    loss_sum += std::log(sum) - std::log(row(t));
    row /= sum;
    row(t) -= 1.0;
  }
}

struct ChunkResult {
  double loss_sum = 0;
  std::size_t count = 0;
  std::size_t correct = 0;
  ParamBundle grads;
};

// Shared driver for both losses. Chunk k covers sequences [16k, 16k+16).
template <typename Fn>
std::vector<ChunkResult> run_chunks(std::size_t n_seqs, std::size_t threads, Fn&& fn) {
  const std::size_t n_chunks = (n_seqs + kGradChunk - 1) / kGradChunk;
  std::vector<ChunkResult> out(n_chunks);
  threads = std::max<std::size_t>(1, std::min(threads, n_chunks));
  auto work = [&](std::size_t t) {
    for (std::size_t k = t; k < n_chunks; k += threads) {
      const std::size_t first = k * kGradChunk;
      fn(k, first, std::min(kGradChunk, n_seqs - first), out[k]);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return out;
}

Gradients reduce(std::vector<ChunkResult>& chunks, const std::vector<bool>& frozen, bool with_grads) {
  Gradients g;
  double loss_sum = 0;
  for (std::size_t k = 0; k < chunks.size(); ++k) {
    loss_sum += chunks[k].loss_sum;
    g.value.count += chunks[k].count;
    g.value.correct += chunks[k].correct;
    if (!with_grads) continue;
    if (k == 0) {
      g.grads = std::move(chunks[0].grads);
    } else {
      for (std::size_t i = 0; i < g.grads.size(); ++i) g.grads.value(i) += chunks[k].grads.value(i);
    }
  }
  if (g.value.count > 0) {
    g.value.loss = loss_sum / static_cast<double>(g.value.count);
    const double inv = 1.0 / static_cast<double>(g.value.count);
    for (std::size_t i = 0; i < g.grads.size(); ++i) {
      if (frozen[i]) {
        g.grads.value(i).setZero();
      } else {
        g.grads.value(i) *= inv;
      }
    }
  }
  return g;
}

std::vector<ChunkResult> mlm_chunks(const Model& model, const MaskPlan& plan, const std::vector<bool>* frozen,
                                    std::size_t threads, std::uint64_t dropout_seed) {
  check_batch(model, plan.input);
  const Layout lay(model.config.n_layers);
  for (const auto& mt : plan.tokens) {
    if (mt.seq >= plan.input.size || mt.pos >= plan.input.len) {
      throw Error(ErrorCode::ShapeMismatch, "mask plan position outside the batch");
    }
    if (mt.target >= model.config.vocab_size) throw Error(ErrorCode::IdOutOfRange, "mask target out of range");
  }
  // Tokens grouped by sequence, in plan order.
  std::vector<std::vector<MaskedToken>> per_seq(plan.input.size);
  for (const auto& mt : plan.tokens) per_seq[mt.seq].push_back(mt);

  return run_chunks(plan.input.size, threads, [&](std::size_t k, std::size_t first, std::size_t count,
                                                  ChunkResult& res) {
    const Batch sub = plan.input.slice(first, count);
    const bool train = frozen != nullptr;
    Rng drop_rng = Rng::stream(dropout_seed, k);
    Tape tape;
    encode(model, sub, tape, train ? &drop_rng : nullptr);
    std::vector<Eigen::Index> rows;
    std::vector<std::size_t> targets;
    for (std::size_t s = 0; s < count; ++s) {
      for (const auto& mt : per_seq[first + s]) {
        rows.push_back(static_cast<Eigen::Index>(s * sub.len + mt.pos));
        targets.push_back(mt.target);
      }
    }
    res.count = rows.size();
    if (rows.empty()) {
      if (train) res.grads = model.params.zeros_like();
      return;
    }
    const auto d = static_cast<Eigen::Index>(model.config.d_model);
    Mat zm(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) zm.row(static_cast<Eigen::Index>(i)) = tape.z.row(rows[i]);
    const Mat& w = model.params.value(lay.mlm_w);
    Mat logits = zm * w;
    logits.rowwise() += model.params.value(lay.mlm_b).row(0);
    cross_entropy(logits, targets, res.loss_sum, res.correct);
    if (!train) return;
    res.grads = model.params.zeros_like();
    res.grads.value(lay.mlm_w).noalias() = zm.transpose() * logits;
    res.grads.value(lay.mlm_b).row(0) = logits.colwise().sum();
    Mat dzm = logits * w.transpose();
    Mat dz = Mat::Zero(tape.z.rows(), tape.z.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) dz.row(rows[i]) += dzm.row(static_cast<Eigen::Index>(i));
    encode_back(model, sub, tape, dz, *frozen, res.grads);
  });
}

std::vector<ChunkResult> cls_chunks(const Model& model, const Batch& batch, std::span<const ThreatClass> labels,
                                    const std::vector<bool>* frozen, std::size_t threads,
                                    std::uint64_t dropout_seed) {
  check_batch(model, batch);
  if (labels.size() != batch.size) throw Error(ErrorCode::ShapeMismatch, "one label per sequence required");
  for (auto l : labels) {
    if (index_of(l) >= model.config.n_classes) throw Error(ErrorCode::IdOutOfRange, "label outside n_classes");
  }
  const Layout lay(model.config.n_layers);
  return run_chunks(batch.size, threads, [&](std::size_t k, std::size_t first, std::size_t count,
                                             ChunkResult& res) {
    const Batch sub = batch.slice(first, count);
    const bool train = frozen != nullptr;
    Rng drop_rng = Rng::stream(dropout_seed, k);
    Tape tape;
    encode(model, sub, tape, train ? &drop_rng : nullptr);
    const auto d = static_cast<Eigen::Index>(model.config.d_model);
    Mat zc(static_cast<Eigen::Index>(count), d);
    std::vector<std::size_t> targets(count);
    for (std::size_t s = 0; s < count; ++s) {
      zc.row(static_cast<Eigen::Index>(s)) = tape.z.row(static_cast<Eigen::Index>(s * sub.len));
      targets[s] = index_of(labels[first + s]);
    }
    const Mat& w = model.params.value(lay.cls_w);
    Mat logits = zc * w;
    logits.rowwise() += model.params.value(lay.cls_b).row(0);
    res.count = count;
    cross_entropy(logits, targets, res.loss_sum, res.correct);
    if (!train) return;
    res.grads = model.params.zeros_like();
    res.grads.value(lay.cls_w).noalias() = zc.transpose() * logits;
    res.grads.value(lay.cls_b).row(0) = logits.colwise().sum();
    Mat dzc = logits * w.transpose();
    Mat dz = Mat::Zero(tape.z.rows(), tape.z.cols());
    for (std::size_t s = 0; s < count; ++s) {
      dz.row(static_cast<Eigen::Index>(s * sub.len)) = dzc.row(static_cast<Eigen::Index>(s));
    }
    encode_back(model, sub, tape, dz, *frozen, res.grads);
  });
}

}  // namespace

void validate(const ModelConfig& c) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::InvalidConfig, "model." + field + ": " + why);
  };
  if (c.vocab_size == 0) fail("vocab_size", "must be positive");
  if (c.d_model == 0) fail("d_model", "must be positive");
  if (c.n_heads == 0) fail("n_heads", "must be positive");
  if (c.d_model % c.n_heads != 0) fail("n_heads", "must divide d_model");
  if (c.n_layers == 0) fail("n_layers", "must be positive");
  if (c.d_ff == 0) fail("d_ff", "must be positive");
  if (c.max_len == 0 || c.max_len > 255) fail("max_len", "must be in 1..255");
  if (c.n_classes != kClassCount) fail("n_classes", "must be 4");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) fail("dropout", "must be in [0, 1)");
}

ModelConfig default_model_config(const Vocab& vocab) {
  ModelConfig c;
  c.vocab_size = vocab.size();
  return c;
}

void ParamBundle::add(std::string name, Mat value) {
  if (index_.count(name)) throw Error(ErrorCode::ShapeMismatch, "duplicate array " + name);
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

std::size_t ParamBundle::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::ShapeMismatch, "no array named " + name);
  return it->second;
}

ParamBundle ParamBundle::zeros_like() const {
  ParamBundle out;
  out.names_ = names_;
  out.index_ = index_;
  out.values_.reserve(values_.size());
  for (const auto& v : values_) out.values_.push_back(Mat::Zero(v.rows(), v.cols()));
  return out;
}

bool ParamBundle::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](const Mat& m) { return m.allFinite(); });
}

std::size_t ParamBundle::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

bool ParamBundle::operator==(const ParamBundle& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const Mat& a = values_[i];
    const Mat& b = other.values_[i];
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    // Bitwise, so -0.0 != 0.0 and NaN payloads count.
    if (std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) != 0) return false;
  }
  return true;
}

ParamBundle zero_params(const ModelConfig& c) {
  validate(c);
  const auto V = static_cast<Eigen::Index>(c.vocab_size);
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto f = static_cast<Eigen::Index>(c.d_ff);
  const auto C = static_cast<Eigen::Index>(c.n_classes);
  ParamBundle p;
  p.add("tok_emb", Mat::Zero(V, d));
  p.add("pos_emb", Mat::Zero(static_cast<Eigen::Index>(c.max_len), d));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    p.add(pre + "ln1.gain", Mat::Zero(1, d));
    p.add(pre + "ln1.bias", Mat::Zero(1, d));
    p.add(pre + "attn.wq", Mat::Zero(d, d));
    p.add(pre + "attn.wk", Mat::Zero(d, d));
    p.add(pre + "attn.wv", Mat::Zero(d, d));
    p.add(pre + "attn.wo", Mat::Zero(d, d));
    p.add(pre + "ln2.gain", Mat::Zero(1, d));
    p.add(pre + "ln2.bias", Mat::Zero(1, d));
    p.add(pre + "ffn.w1", Mat::Zero(d, f));
    p.add(pre + "ffn.b1", Mat::Zero(1, f));
    p.add(pre + "ffn.w2", Mat::Zero(f, d));
    p.add(pre + "ffn.b2", Mat::Zero(1, d));
  }
  p.add("final_ln.gain", Mat::Zero(1, d));
  p.add("final_ln.bias", Mat::Zero(1, d));
  p.add("mlm.w", Mat::Zero(d, V));
  p.add("mlm.b", Mat::Zero(1, V));
  p.add("cls.w", Mat::Zero(d, C));
  p.add("cls.b", Mat::Zero(1, C));
  return p;
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  Model m{config, zero_params(config)};
  Rng rng = Rng::stream(seed, 0);
  const double r = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const std::string& name = m.params.name(i);
    Mat& v = m.params.value(i);
    if (name.ends_with(".gain")) {
      v.setOnes();
    } else if (name.ends_with(".bias") || name.ends_with(".b") || name.ends_with(".b1") ||
               name.ends_with(".b2")) {
      v.setZero();
    } else {
      for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = r * (2.0 * rng.unit() - 1.0);
    }
  }
  return m;
}

void check_shapes(const Model& model) {
  validate(model.config);
  const ParamBundle expect = zero_params(model.config);
  if (expect.names() != model.params.names()) {
    throw Error(ErrorCode::ShapeMismatch, "parameter names do not match the model config");
  }
  for (std::size_t i = 0; i < expect.size(); ++i) {
    if (expect.value(i).rows() != model.params.value(i).rows() ||
        expect.value(i).cols() != model.params.value(i).cols()) {
      throw Error(ErrorCode::ShapeMismatch, "array " + expect.name(i) + " has the wrong shape");
    }
  }
}

Batch Batch::from(std::span<const TokenSeq> seqs) {
  Batch b;
  b.size = seqs.size();
  b.len = kSeqLen;
  b.ids.reserve(b.size * b.len);
  b.mask.reserve(b.size * b.len);
  for (const auto& s : seqs) {
    b.ids.insert(b.ids.end(), s.ids.begin(), s.ids.end());
    for (bool m : s.mask) b.mask.push_back(m ? 1 : 0);
  }
  return b;
}

Batch Batch::from(std::span<const TokenSeq> seqs, std::span<const std::size_t> order) {
  Batch b;
  b.size = order.size();
  b.len = kSeqLen;
  b.ids.reserve(b.size * b.len);
  b.mask.reserve(b.size * b.len);
  for (std::size_t i : order) {
    b.ids.insert(b.ids.end(), seqs[i].ids.begin(), seqs[i].ids.end());
    for (bool m : seqs[i].mask) b.mask.push_back(m ? 1 : 0);
  }
  return b;
}

Batch Batch::from_ids(const std::vector<std::vector<TokenId>>& rows, std::size_t len) {
  Batch b;
  b.size = rows.size();
  b.len = len;
  b.ids.assign(b.size * len, special::kPad);
  for (std::size_t s = 0; s < rows.size(); ++s) {
    if (rows[s].size() > len) throw Error(ErrorCode::ShapeMismatch, "row longer than batch length");
    std::copy(rows[s].begin(), rows[s].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(s * len));
  }
  b.mask.resize(b.ids.size());
  for (std::size_t i = 0; i < b.ids.size(); ++i) b.mask[i] = b.ids[i] != special::kPad ? 1 : 0;
  return b;
}

Batch Batch::slice(std::size_t first, std::size_t count) const {
  Batch b;
  b.size = count;
  b.len = len;
  const auto lo = static_cast<std::ptrdiff_t>(first * len);
  const auto hi = static_cast<std::ptrdiff_t>((first + count) * len);
  b.ids.assign(ids.begin() + lo, ids.begin() + hi);
  b.mask.assign(mask.begin() + lo, mask.begin() + hi);
  return b;
}

ForwardResult forward(const Model& model, const Batch& batch, bool token_logits) {
  check_batch(model, batch);
  const Layout lay(model.config.n_layers);
  Tape tape;
  encode(model, batch, tape, nullptr);
  ForwardResult out;
  out.hidden = std::move(tape.z);
  Mat cls_rows(static_cast<Eigen::Index>(batch.size), out.hidden.cols());
  for (std::size_t s = 0; s < batch.size; ++s) {
    cls_rows.row(static_cast<Eigen::Index>(s)) = out.hidden.row(static_cast<Eigen::Index>(s * batch.len));
  }
  out.class_logits = cls_rows * model.params.value(lay.cls_w);
  out.class_logits.rowwise() += model.params.value(lay.cls_b).row(0);
  if (token_logits) {
    out.token_logits = out.hidden * model.params.value(lay.mlm_w);
    out.token_logits.rowwise() += model.params.value(lay.mlm_b).row(0);
  }
  return out;
}

Mat attention_weights(const Model& model, const Batch& batch, std::size_t layer, std::size_t head,
                      std::size_t seq) {
  check_batch(model, batch);
  if (layer >= model.config.n_layers || head >= model.config.n_heads || seq >= batch.size) {
    throw Error(ErrorCode::ShapeMismatch, "attention index out of range");
  }
  Tape tape;
  encode(model, batch, tape, nullptr);
  return tape.layers[layer].probs[seq * model.config.n_heads + head];
}

MaskPlan make_mask_plan(const Batch& batch, std::size_t vocab_size, Rng& rng) {
  MaskPlan plan;
  plan.input = batch;
  for (std::size_t s = 0; s < batch.size; ++s) {
    std::vector<std::size_t> cand;
    for (std::size_t t = 0; t < batch.len; ++t) {
      if (batch.id(s, t) >= special::kCount) cand.push_back(t);
    }
    if (cand.empty()) continue;
    const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.15 * static_cast<double>(cand.size()))));
    // Partial Fisher-Yates: the first k entries are the chosen positions.
    for (std::size_t i = 0; i < k; ++i) std::swap(cand[i], cand[i + rng.below(cand.size() - i)]);
    std::sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k));
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t t = cand[i];
      const TokenId original = batch.id(s, t);
      const double u = rng.unit();
      TokenId& slot = plan.input.ids[s * batch.len + t];
      if (u < 0.8) {
        slot = special::kMask;
      } else if (u < 0.9) {
        slot = static_cast<TokenId>(special::kCount + rng.below(vocab_size - special::kCount));
      }
      plan.tokens.push_back({s, t, original});
    }
  }
  return plan;
}

LossValue mlm_loss(const Model& model, const MaskPlan& plan) {
  auto chunks = mlm_chunks(model, plan, nullptr, 1, 0);
  return reduce(chunks, {}, false).value;
}

LossValue cls_loss(const Model& model, const Batch& batch, std::span<const ThreatClass> labels) {
  auto chunks = cls_chunks(model, batch, labels, nullptr, 1, 0);
  return reduce(chunks, {}, false).value;
}

std::vector<bool> resolve_freeze(const ParamBundle& params, std::span<const std::string> plan) {
  std::vector<bool> frozen(params.size(), false);
  for (const auto& target : plan) {
    bool hit = false;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string& n = params.name(i);
      const bool match = target == "all" || n == target ||
                         (target == "embeddings" && (n == "tok_emb" || n == "pos_emb")) ||
                         (n.starts_with(target + "."));
      if (match) {
        frozen[i] = true;
        hit = true;
      }
    }
    if (!hit) throw Error(ErrorCode::UnknownFreezeTarget, "freeze plan names unknown array '" + target + "'");
  }
  return frozen;
}

Gradients backward_mlm(const Model& model, const MaskPlan& plan, const std::vector<bool>& frozen,
                       std::size_t threads, std::uint64_t dropout_seed) {
  if (frozen.size() != model.params.size()) throw Error(ErrorCode::ShapeMismatch, "freeze flags do not match params");
  auto chunks = mlm_chunks(model, plan, &frozen, threads, dropout_seed);
  Gradients g = reduce(chunks, frozen, true);
  if (g.grads.size() == 0) g.grads = model.params.zeros_like();
  return g;
}

Gradients backward_cls(const Model& model, const Batch& batch, std::span<const ThreatClass> labels,
                       const std::vector<bool>& frozen, std::size_t threads, std::uint64_t dropout_seed) {
  if (frozen.size() != model.params.size()) throw Error(ErrorCode::ShapeMismatch, "freeze flags do not match params");
  auto chunks = cls_chunks(model, batch, labels, &frozen, threads, dropout_seed);
  Gradients g = reduce(chunks, frozen, true);
  if (g.grads.size() == 0) g.grads = model.params.zeros_like();
  return g;
}

ThreatVerdict verdict_from_logits(const RowVec& logits) {
  if (logits.size() != static_cast<Eigen::Index>(kClassCount)) {
    throw Error(ErrorCode::ShapeMismatch, "verdict needs 4 class logits");
  }
  ThreatVerdict v;
  const double m = logits.maxCoeff();
  double sum = 0;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    v.probs[c] = std::exp(logits(static_cast<Eigen::Index>(c)) - m);
    sum += v.probs[c];
  }
  std::size_t best = 0;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    v.probs[c] /= sum;
    if (v.probs[c] > v.probs[best]) best = c;
  }
  v.cls = static_cast<ThreatClass>(best);
  v.threat_level = std::clamp(1.0 - v.probs[index_of(ThreatClass::Benign)], 0.0, 1.0);
  return v;
}

ThreatVerdict predict(const Model& model, const TokenSeq& seq) {
  ForwardResult r = forward(model, Batch::from(std::span<const TokenSeq>(&seq, 1)), false);
  return verdict_from_logits(r.class_logits.row(0));
}

std::vector<ThreatVerdict> predict_all(const Model& model, std::span<const TokenSeq> seqs, std::size_t threads) {
  std::vector<ThreatVerdict> out(seqs.size());
  run_chunks(seqs.size(), threads, [&](std::size_t, std::size_t first, std::size_t count, ChunkResult&) {
    ForwardResult r = forward(model, Batch::from(seqs.subspan(first, count)), false);
    for (std::size_t s = 0; s < count; ++s) out[first + s] = verdict_from_logits(r.class_logits.row(static_cast<Eigen::Index>(s)));
  });
  return out;
}

std::size_t default_threads() {
  if (const char* env = std::getenv("SENTINEL_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace sentinel::nn
