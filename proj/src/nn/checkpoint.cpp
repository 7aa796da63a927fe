#include "sentinel/nn/checkpoint.hpp"

#include <cstring>

#include "sentinel/error.hpp"

namespace sentinel::nn {

namespace {

constexpr char kMagic[4] = {'S', 'N', 'T', 'L'};
constexpr std::uint16_t kVersion = 1;

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::BadCheckpoint, what); }

class Reader {
 public:
  explicit Reader(ByteView data) : data_(data) {}

  const std::uint8_t* take(std::size_t n) {
    if (data_.size() - pos_ < n) bad("checkpoint truncated at byte " + std::to_string(pos_));
    const std::uint8_t* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint16_t u16() { return load_le16(take(2)); }
  std::uint32_t u32() { return load_le32(take(4)); }
  double f64() { return load_f64(take(8)); }
  bool done() const { return pos_ == data_.size(); }

 private:
  ByteView data_;
  std::size_t pos_ = 0;
};

}  // namespace

Bytes save_checkpoint(const Model& model, const std::string& vocab_sha256) {
  check_shapes(model);
  const auto sha = hex_decode(vocab_sha256);
  if (!sha || sha->size() != 32) throw Error(ErrorCode::BadCheckpoint, "vocab hash is not a SHA-256 digest");
  const auto& c = model.config;
  Bytes out(kMagic, kMagic + 4);
  put_le16(out, kVersion);
  for (std::size_t v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_len, c.n_classes}) {
    put_le32(out, static_cast<std::uint32_t>(v));
  }
  put_f64(out, c.dropout);
  append(out, *sha);
  put_le32(out, static_cast<std::uint32_t>(model.params.size()));
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const std::string& name = model.params.name(i);
    const Mat& m = model.params.value(i);
    put_le16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(2);
    put_le32(out, static_cast<std::uint32_t>(m.rows()));
    put_le32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.size(); ++k) put_f64(out, m.data()[k]);
  }
  return out;
}

Checkpoint load_checkpoint(ByteView data) {
  Reader r(data);
  if (std::memcmp(r.take(4), kMagic, 4) != 0) bad("bad checkpoint magic");
  if (r.u16() != kVersion) bad("unsupported checkpoint version");
  Checkpoint ck;
  ModelConfig& c = ck.model.config;
  c.vocab_size = r.u32();
  c.d_model = r.u32();
  c.n_layers = r.u32();
  c.n_heads = r.u32();
  c.d_ff = r.u32();
  c.max_len = r.u32();
  c.n_classes = r.u32();
  c.dropout = r.f64();
  ck.vocab_sha256 = hex_encode(ByteView(r.take(32), 32));
  try {
    validate(c);
  } catch (const Error& e) {
    bad(std::string("checkpoint config: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t a = 0; a < count; ++a) {
    const std::uint16_t len = r.u16();
    const std::uint8_t* name = r.take(len);
    const std::uint8_t rank = r.u8();
    if (rank != 2) bad("array rank " + std::to_string(rank) + " unsupported");
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows != 0 && cols > (data.size() / 8) / rows) bad("array dims exceed checkpoint size");
    Mat m(rows, cols);
    const std::uint8_t* p = r.take(std::size_t{rows} * cols * 8);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = load_f64(p + 8 * k);
    try {
      ck.model.params.add(std::string(reinterpret_cast<const char*>(name), len), std::move(m));
    } catch (const Error& e) {
      bad(e.what());
    }
  }
  if (!r.done()) bad("trailing bytes after checkpoint arrays");
  try {
    check_shapes(ck.model);
  } catch (const Error& e) {
    bad(e.what());
  }
  if (!ck.model.params.all_finite()) bad("checkpoint holds non-finite values");
  return ck;
}

Checkpoint load_checkpoint(ByteView data, const std::string& expected_vocab_sha256) {
  Checkpoint ck = load_checkpoint(data);
  if (ck.vocab_sha256 != expected_vocab_sha256) {
    throw Error(ErrorCode::CompatibilityError,
                "checkpoint vocabulary " + ck.vocab_sha256 + " differs from " + expected_vocab_sha256);
  }
  return ck;
}

}  // namespace sentinel::nn
